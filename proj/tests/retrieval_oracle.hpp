#pragma once

#include <algorithm>
#include <optional>
#include <random>
#include <vector>

#include "mmet/retrieval.hpp"

namespace mmet::testing {

// Random query/gallery labels over a coarse distance grid.
struct Instance {
  DistanceMatrix dist;
  std::vector<std::size_t> qid, qcam, gid, gcam;
};

inline Instance random_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> nq(1, 10), ng(1, 20), id(0, 4), cam(0, 2);
  std::uniform_int_distribution<int> level(0, 6);  // coarse values force ties
  Instance in;
  const auto q = nq(rng), g = ng(rng);
  in.dist = {q, g, {}};
  for (std::size_t i = 0; i < q * g; ++i) in.dist.values.push_back(level(rng) * 0.5);
  for (std::size_t i = 0; i < q; ++i) {
    in.qid.push_back(id(rng));
    in.qcam.push_back(cam(rng));
  }
  for (std::size_t i = 0; i < g; ++i) {
    in.gid.push_back(id(rng));
    in.gcam.push_back(cam(rng));
  }
  return in;
}

// Naive bookkeeping: explicit ranked list of labels per query.
struct OracleResult {
  std::vector<std::optional<double>> ap;
  std::vector<std::optional<std::size_t>> first;
};

inline OracleResult oracle(const Instance& in) {
  OracleResult out;
  for (std::size_t q = 0; q < in.dist.rows; ++q) {
    std::vector<std::pair<double, std::size_t>> order;
    for (std::size_t g = 0; g < in.dist.cols; ++g) order.emplace_back(in.dist.at(q, g), g);
    // (distance, index) lexicographic order is the stable order by distance.
    std::sort(order.begin(), order.end());
    std::vector<bool> hit;
    for (auto [d, g] : order) {
      if (in.gid[g] == in.qid[q] && in.gcam[g] == in.qcam[q]) continue;
      hit.push_back(in.gid[g] == in.qid[q]);
    }
    const auto total = static_cast<std::size_t>(std::count(hit.begin(), hit.end(), true));
    if (total == 0) {
      out.ap.emplace_back();
      out.first.emplace_back();
      continue;
    }
    double sum = 0.0;
    for (std::size_t r = 0; r < hit.size(); ++r) {
      if (!hit[r]) continue;
      std::size_t seen = 0;
      for (std::size_t s = 0; s <= r; ++s) seen += hit[s];
      sum += static_cast<double>(seen) / static_cast<double>(r + 1);
    }
    out.ap.emplace_back(sum / static_cast<double>(total));
    out.first.emplace_back(std::find(hit.begin(), hit.end(), true) - hit.begin() + 1);
  }
  return out;
}

}  // namespace mmet::testing
