#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ttpmap::kernels {

struct Hit {
  std::uint32_t index;
  double score;
  bool operator==(const Hit&) const = default;
};

/// Row-major query/corpus matrices of unit vectors. For every query returns
/// the min(k, n_corpus) corpus rows with the highest dot product, ordered by
/// descending score and then ascending `tie_rank[row]`.
///
/// Both variants compute every dot product with the same left-to-right
/// accumulation, so their outputs are bit-identical.
std::vector<std::vector<Hit>> topk_dot_parallel(std::span<const double> queries, std::span<const double> corpus,
                                                std::size_t dim, std::size_t k,
                                                std::span<const std::uint32_t> tie_rank);

/// Single-threaded reference kept for tests and the benchmark.
std::vector<std::vector<Hit>> topk_dot_serial(std::span<const double> queries, std::span<const double> corpus,
                                              std::size_t dim, std::size_t k,
                                              std::span<const std::uint32_t> tie_rank);

int max_threads();

}  // namespace ttpmap::kernels
