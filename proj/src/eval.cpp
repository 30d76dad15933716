#include "hscmae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace hscmae {

double average_precision(std::span<const char> ranked_relevance) {
  double hits = 0.0;
  double sum = 0.0;
  for (std::size_t r = 0; r < ranked_relevance.size(); ++r) {
    if (!ranked_relevance[r]) continue;
    hits += 1.0;
    sum += hits / static_cast<double>(r + 1);
  }
  if (hits == 0.0) fail(ErrorKind::usage, "average_precision: no relevant items in ranking");
  return sum / hits;
}

std::vector<Index> rank_gallery(const Matrix& similarity, Index query) {
  std::vector<Index> order(static_cast<std::size_t>(similarity.cols()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return similarity(query, a) > similarity(query, b); });
  return order;
}

double mean_average_precision(const Matrix& similarity, std::span<const int> query_labels,
                              std::span<const int> gallery_labels, std::vector<double>* per_query,
                              std::size_t* skipped) {
  if (static_cast<Index>(query_labels.size()) != similarity.rows() ||
      static_cast<Index>(gallery_labels.size()) != similarity.cols()) {
    fail(ErrorKind::shape, "mean_average_precision: labels do not cover the similarity matrix " +
                               shape_str(similarity));
  }
  if (per_query) per_query->clear();
  std::size_t missing = 0;
  double total = 0.0;
  std::size_t counted = 0;
  std::vector<char> rel(static_cast<std::size_t>(similarity.cols()));
  for (Index q = 0; q < similarity.rows(); ++q) {
    const std::vector<Index> order = rank_gallery(similarity, q);
    bool any = false;
    for (std::size_t r = 0; r < order.size(); ++r) {
      rel[r] = gallery_labels[static_cast<std::size_t>(order[r])] == query_labels[static_cast<std::size_t>(q)];
      any = any || rel[r];
    }
    if (!any) {
      ++missing;
      continue;
    }
    const double ap = average_precision(rel);
    if (per_query) per_query->push_back(ap);
    total += ap;
    ++counted;
  }
  if (skipped) *skipped = missing;
  if (counted == 0) fail(ErrorKind::usage, "mean_average_precision: no query has a relevant gallery item");
  return total / static_cast<double>(counted);
}

RetrievalReport cross_modal_map(const Matrix& za, const Matrix& zv, std::span<const int> labels) {
  if (za.rows() != zv.rows() || za.cols() != zv.cols()) {
    fail(ErrorKind::shape, "cross_modal_map: embeddings " + shape_str(za) + " and " + shape_str(zv) + " differ");
  }
  if (static_cast<Index>(labels.size()) != za.rows()) fail(ErrorKind::shape, "cross_modal_map: label count mismatch");
  const Matrix s = za * zv.transpose();
  RetrievalReport r;
  r.map_a2v = mean_average_precision(s, labels, labels, &r.ap_a2v);
  r.map_v2a = mean_average_precision(s.transpose(), labels, labels, &r.ap_v2a);
  r.map_avg = (r.map_a2v + r.map_v2a) / 2.0;
  r.gap = std::abs(r.map_a2v - r.map_v2a);
  return r;
}

std::vector<RankList> top_ranklists(const Matrix& similarity, std::span<const int> query_labels,
                                    std::span<const int> gallery_labels, Index depth) {
  std::vector<RankList> out;
  for (Index q = 0; q < similarity.rows(); ++q) {
    std::vector<Index> order = rank_gallery(similarity, q);
    order.resize(static_cast<std::size_t>(std::min<Index>(depth, static_cast<Index>(order.size()))));
    RankList list;
    list.query = q;
    for (Index g : order) {
      list.ranked.push_back(g);
      list.relevant.push_back(gallery_labels[static_cast<std::size_t>(g)] == query_labels[static_cast<std::size_t>(q)]);
    }
    out.push_back(std::move(list));
  }
  return out;
}

void write_report_csv(const RetrievalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::data, "cannot write '" + path.string() + "'");
  char line[256];
  out << "map_a2v,map_v2a,map_avg,gap\n";
  std::snprintf(line, sizeof(line), "%.10f,%.10f,%.10f,%.10f\n", report.map_a2v, report.map_v2a, report.map_avg,
                report.gap);
  out << line;
}

void write_ranklists_csv(const std::vector<RankList>& a2v, const std::vector<RankList>& v2a,
                         const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::data, "cannot write '" + path.string() + "'");
  out << "direction,query,ranked_ids,relevance\n";
  auto emit = [&](const char* dir, const std::vector<RankList>& lists) {
    for (const RankList& l : lists) {
      out << dir << "," << l.query << ",";
      for (std::size_t i = 0; i < l.ranked.size(); ++i) out << (i ? " " : "") << l.ranked[i];
      out << ",";
      for (std::size_t i = 0; i < l.relevant.size(); ++i) out << (i ? " " : "") << int(l.relevant[i]);
      out << "\n";
    }
  };
  emit("a2v", a2v);
  emit("v2a", v2a);
}

}  // namespace hscmae
