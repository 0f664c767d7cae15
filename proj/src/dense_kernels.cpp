#include "ttpmap/dense_kernels.hpp"

#include <algorithm>

#include <omp.h>

namespace ttpmap::kernels {

namespace {

inline double dot(const double* a, const double* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t i = 0; i < dim; ++i) s += a[i] * b[i];
  return s;
}

struct Ranked {
  std::span<const std::uint32_t> tie_rank;
  bool operator()(const Hit& a, const Hit& b) const {
    if (a.score != b.score) return a.score > b.score;
    return tie_rank[a.index] < tie_rank[b.index];
  }
};

void select_topk(std::vector<Hit>& scratch, std::size_t k, const Ranked& cmp, std::vector<Hit>& out) {
  const std::size_t keep = std::min(k, scratch.size());
  std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(keep), scratch.end(), cmp);
  out.assign(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(keep));
}

}  // namespace

std::vector<std::vector<Hit>> topk_dot_parallel(std::span<const double> queries, std::span<const double> corpus,
                                                std::size_t dim, std::size_t k,
                                                std::span<const std::uint32_t> tie_rank) {
  const std::size_t nq = dim == 0 ? 0 : queries.size() / dim;
  const std::size_t nc = dim == 0 ? 0 : corpus.size() / dim;
  std::vector<std::vector<Hit>> out(nq);
  const Ranked cmp{tie_rank};

#pragma omp parallel
  {
    std::vector<Hit> scratch(nc);
#pragma omp for schedule(dynamic, 4)
    for (std::ptrdiff_t q = 0; q < static_cast<std::ptrdiff_t>(nq); ++q) {
      const double* qv = queries.data() + static_cast<std::size_t>(q) * dim;
      for (std::size_t c = 0; c < nc; ++c) {
        scratch[c] = Hit{static_cast<std::uint32_t>(c), dot(qv, corpus.data() + c * dim, dim)};
      }
      select_topk(scratch, k, cmp, out[static_cast<std::size_t>(q)]);
    }
  }
  return out;
}

std::vector<std::vector<Hit>> topk_dot_serial(std::span<const double> queries, std::span<const double> corpus,
                                              std::size_t dim, std::size_t k,
                                              std::span<const std::uint32_t> tie_rank) {
  const std::size_t nq = dim == 0 ? 0 : queries.size() / dim;
  const std::size_t nc = dim == 0 ? 0 : corpus.size() / dim;
  std::vector<std::vector<Hit>> out(nq);
  const Ranked cmp{tie_rank};
  std::vector<Hit> scratch(nc);
  for (std::size_t q = 0; q < nq; ++q) {
    for (std::size_t c = 0; c < nc; ++c) {
      scratch[c] = Hit{static_cast<std::uint32_t>(c), dot(queries.data() + q * dim, corpus.data() + c * dim, dim)};
    }
    select_topk(scratch, k, cmp, out[q]);
  }
  return out;
}

int max_threads() { return omp_get_max_threads(); }

}  // namespace ttpmap::kernels
