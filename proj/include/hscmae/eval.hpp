#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "hscmae/diffcore.hpp"

namespace hscmae {

struct RetrievalReport {
  double map_a2v = 0.0;
  double map_v2a = 0.0;
  double map_avg = 0.0;
  /// |map_a2v - map_v2a|
  double gap = 0.0;
  std::vector<double> ap_a2v;
  std::vector<double> ap_v2a;
};

/// (1/R) * sum over relevant ranks r of precision@r. Needs at least one relevant item.
double average_precision(std::span<const char> ranked_relevance);

/// Gallery indices of row `query` of `similarity`, by descending score, ties by ascending index.
std::vector<Index> rank_gallery(const Matrix& similarity, Index query);

/// Mean AP over queries (rows of `similarity`) with class-label relevance.
/// Queries without any relevant gallery item are skipped and counted in `skipped`.
double mean_average_precision(const Matrix& similarity, std::span<const int> query_labels,
                              std::span<const int> gallery_labels, std::vector<double>* per_query = nullptr,
                              std::size_t* skipped = nullptr);

/// Cosine retrieval in both directions over unit-norm embeddings of one labelled split.
RetrievalReport cross_modal_map(const Matrix& za, const Matrix& zv, std::span<const int> labels);

struct RankList {
  Index query = 0;
  std::vector<Index> ranked;
  std::vector<char> relevant;
};

/// Top-`depth` gallery lists for every query row of `similarity`.
std::vector<RankList> top_ranklists(const Matrix& similarity, std::span<const int> query_labels,
                                    std::span<const int> gallery_labels, Index depth = 10);

void write_report_csv(const RetrievalReport& report, const std::filesystem::path& path);
/// direction,query,ranked_ids,relevance (ids and bits separated by spaces)
void write_ranklists_csv(const std::vector<RankList>& a2v, const std::vector<RankList>& v2a,
                         const std::filesystem::path& path);

}  // namespace hscmae
