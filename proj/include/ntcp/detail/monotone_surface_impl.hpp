#pragma once

#include "ntcp/errors.hpp"

namespace ntcp {

template <typename Draw>
Eigen::MatrixXd posterior_mean_on_grid(std::span<const Draw> draws, std::span<const double> grid_d,
                                       std::span<const double> grid_g) {
  if (draws.empty()) throw EmptyDraws("posterior_mean_on_grid: no draws");
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(grid_d.size()),
                                              static_cast<Eigen::Index>(grid_g.size()));
  for (const auto& draw : draws)
    for (std::size_t a = 0; a < grid_d.size(); ++a)
      for (std::size_t b = 0; b < grid_g.size(); ++b)
        sum(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += draw.evaluate(grid_d[a], grid_g[b]);
  return sum / static_cast<double>(draws.size());
}

}  // namespace ntcp
