#include "patchseg/evalkit.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <limits>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>

#include "patchseg/error.hpp"

namespace patchseg {

namespace {

// Minimum-cost perfect matching on a square cost matrix (Kuhn-Munkres with
// potentials). On return u(i) + v(j) <= cost(i, j) everywhere, with equality
// on the matched pairs.
struct SquareSolution {
  std::vector<int> col_of_row;
  std::vector<double> u;
  std::vector<double> v;
};

SquareSolution solve_min_cost(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  SquareSolution s;
  s.col_of_row.assign(n, -1);
  for (int j = 1; j <= n; ++j) s.col_of_row[p[j] - 1] = j - 1;
  s.u.assign(u.begin() + 1, u.end());
  s.v.assign(v.begin() + 1, v.end());
  return s;
}

// Rewrites a perfect matching on the tight-edge graph into the
// lexicographically smallest one over the first `ordered_rows` rows. Every
// perfect matching of tight edges is optimal, so the total is unchanged.
void lexicographic_refine(std::vector<int>& col_of_row, const std::vector<std::vector<char>>& tight,
                          int ordered_rows) {
  const int n = static_cast<int>(col_of_row.size());
  std::vector<int> row_of_col(n);
  for (int r = 0; r < n; ++r) row_of_col[col_of_row[r]] = r;
  std::vector<int> from_row(n);
  std::vector<char> seen_row(n), seen_col(n);

  for (int c = 0; c < ordered_rows; ++c) {
    const int current = col_of_row[c];
    for (int k = 0; k < current; ++k) {
      if (!tight[c][k] || row_of_col[k] < c) continue;  // columns of fixed rows are taken
      // Row c takes k; the displaced owner must reach `current` along an
      // alternating path that avoids fixed rows and column k.
      const int start = row_of_col[k];
      std::fill(seen_row.begin(), seen_row.end(), 0);
      std::fill(seen_col.begin(), seen_col.end(), 0);
      seen_col[k] = 1;
      std::queue<int> frontier;
      frontier.push(start);
      seen_row[start] = 1;
      from_row[start] = -1;
      int end_row = -1;
      while (!frontier.empty() && end_row < 0) {
        const int x = frontier.front();
        frontier.pop();
        for (int j = 0; j < n; ++j) {
          if (!tight[x][j] || seen_col[j]) continue;
          seen_col[j] = 1;
          if (j == current) {
            end_row = x;
            break;
          }
          const int y = row_of_col[j];
          if (y <= c || seen_row[y]) continue;
          seen_row[y] = 1;
          from_row[y] = x;
          frontier.push(y);
        }
      }
      if (end_row < 0) continue;
      int take = current;
      for (int x = end_row; x >= 0; x = from_row[x]) {
        const int old = col_of_row[x];
        col_of_row[x] = take;
        row_of_col[take] = x;
        take = old;
        if (from_row[x] < 0) break;
      }
      col_of_row[c] = k;
      row_of_col[k] = c;
      break;
    }
  }
}

}  // namespace

Assignment hungarian_max(const Eigen::Ref<const Eigen::MatrixXd>& score, double tie_tolerance) {
  const auto classes = static_cast<int>(score.rows());
  const auto clusters = static_cast<int>(score.cols());
  if (classes < 1) throw std::invalid_argument("hungarian_max: need at least one class");
  if (clusters < classes) throw std::invalid_argument("hungarian_max: K < C");
  if (!score.allFinite()) throw std::invalid_argument("hungarian_max: non-finite score");

  // Negate for minimization and pad with zero rows to a square matrix.
  Eigen::MatrixXd cost = Eigen::MatrixXd::Zero(clusters, clusters);
  cost.topRows(classes) = -score;
  SquareSolution sol = solve_min_cost(cost);

  const double scale = 1.0 + (score.size() > 0 ? score.cwiseAbs().maxCoeff() : 0.0);
  const double tol = tie_tolerance * scale;
  std::vector<std::vector<char>> tight(clusters, std::vector<char>(clusters, 0));
  for (int i = 0; i < clusters; ++i) {
    for (int j = 0; j < clusters; ++j) tight[i][j] = cost(i, j) - sol.u[i] - sol.v[j] <= tol;
  }
  for (int i = 0; i < clusters; ++i) tight[i][sol.col_of_row[i]] = 1;
  lexicographic_refine(sol.col_of_row, tight, classes);

  Assignment out;
  out.cluster_of_class.assign(sol.col_of_row.begin(), sol.col_of_row.begin() + classes);
  for (int c = 0; c < classes; ++c) out.total += score(c, out.cluster_of_class[c]);
  return out;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (counts.rows() != other.counts.rows() || counts.cols() != other.counts.cols()) {
    throw std::invalid_argument("confusion matrices differ in shape");
  }
  counts += other.counts;
  ignored_pixels += other.ignored_pixels;
  return *this;
}

ConfusionMatrix accumulate_confusion(const PseudoMask& pred, const PseudoMask& gt, const LabelMerge& merge,
                                     int classes, int clusters, bool drop_unlabeled) {
  if (pred.height() != gt.height() || pred.width() != gt.width()) {
    throw DataError("dimension mismatch: prediction " + std::to_string(pred.height()) + "x" +
                    std::to_string(pred.width()) + " vs ground truth " + std::to_string(gt.height()) + "x" +
                    std::to_string(gt.width()));
  }
  if (classes < 1 || clusters < 1) throw std::invalid_argument("accumulate_confusion: empty label space");

  // Resolve every raw GT value once: class id, -1 ignore, -2 invalid.
  std::array<int, 256> class_of_raw{};
  for (int raw = 0; raw < 256; ++raw) {
    if (merge.empty()) {
      class_of_raw[raw] = raw == kUnlabeled ? -1 : (raw < classes ? raw : -2);
    } else {
      const auto it = merge.find(raw);
      class_of_raw[raw] = it == merge.end() ? -2 : (it->second < 0 ? -1 : (it->second < classes ? it->second : -2));
    }
  }

  ConfusionMatrix cm(classes, clusters);
  for (Eigen::Index y = 0; y < gt.labels.rows(); ++y) {
    for (Eigen::Index x = 0; x < gt.labels.cols(); ++x) {
      const int raw = gt.labels(y, x);
      const int cls = class_of_raw[raw];
      if (cls == -2) {
        throw DataError("GT label " + std::to_string(raw) +
                        (merge.empty() ? " outside class range" : " outside merge table"));
      }
      if (cls == -1) {
        ++cm.ignored_pixels;
        continue;
      }
      const int p = pred.labels(y, x);
      if (p == kUnlabeled) {
        if (!drop_unlabeled) throw DataError("unlabeled prediction pixel while drop_unlabeled is off");
        ++cm.ignored_pixels;
        continue;
      }
      if (p >= clusters) throw DataError("predicted cluster " + std::to_string(p) + " >= K");
      ++cm.counts(cls, p);
    }
  }
  return cm;
}

EvalReport score(const ConfusionMatrix& cm, std::span<const int> cluster_of_class) {
  const int classes = cm.classes();
  const int clusters = cm.clusters();
  if (static_cast<int>(cluster_of_class.size()) != classes) {
    throw std::invalid_argument("score: mapping size differs from class count");
  }
  EvalReport r;
  r.num_classes = classes;
  r.num_clusters = clusters;
  r.cluster_of_class.assign(cluster_of_class.begin(), cluster_of_class.end());
  r.class_of_cluster.assign(clusters, kUnmatched);
  for (int c = 0; c < classes; ++c) {
    const int k = cluster_of_class[c];
    if (k < 0 || k >= clusters || r.class_of_cluster[k] != kUnmatched) {
      throw std::invalid_argument("score: mapping is not injective into 0..K-1");
    }
    r.class_of_cluster[k] = c;
  }
  r.confusion = cm;

  const std::int64_t total = cm.counted();
  std::int64_t tp_sum = 0;
  for (int c = 0; c < classes; ++c) {
    const int k = cluster_of_class[c];
    ClassScore s;
    s.tp = cm.counts(c, k);
    s.fp = cm.counts.col(k).sum() - s.tp;
    s.fn = cm.counts.row(c).sum() - s.tp;
    const auto union_ = s.tp + s.fp + s.fn;
    s.iou = union_ > 0 ? static_cast<double>(s.tp) / static_cast<double>(union_) : 0.0;
    const auto dice = 2 * s.tp + s.fp + s.fn;
    s.f1 = dice > 0 ? 2.0 * static_cast<double>(s.tp) / static_cast<double>(dice) : 0.0;
    tp_sum += s.tp;
    r.miou += s.iou;
    r.mean_f1 += s.f1;
    r.per_class.push_back(s);
  }
  r.miou /= classes;
  r.mean_f1 /= classes;
  r.pixel_accuracy = total > 0 ? static_cast<double>(tp_sum) / static_cast<double>(total) : 0.0;
  return r;
}

EvalReport evaluate_dataset(std::span<const PseudoMask> preds, std::span<const PseudoMask> gts, int clusters,
                            int classes, const LabelMerge& merge, bool drop_unlabeled) {
  if (preds.size() != gts.size()) throw DataError("mismatched prediction and ground-truth lists");
  if (clusters < classes) throw std::invalid_argument("evaluate_dataset: K < C");
  ConfusionMatrix cm(classes, clusters);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    cm += accumulate_confusion(preds[i], gts[i], merge, classes, clusters, drop_unlabeled);
  }
  const Assignment match = hungarian_max(cm.counts.cast<double>());
  return score(cm, match.cluster_of_class);
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["num_classes"] = report.num_classes;
  j["num_clusters"] = report.num_clusters;
  j["miou"] = report.miou;
  j["pixel_accuracy"] = report.pixel_accuracy;
  j["mean_f1"] = report.mean_f1;
  j["cluster_of_class"] = report.cluster_of_class;
  j["class_of_cluster"] = report.class_of_cluster;
  j["ignored_pixels"] = report.confusion.ignored_pixels;
  j["counted_pixels"] = report.confusion.counted();
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const auto& s = report.per_class[c];
    classes.push_back({{"class", c},
                       {"cluster", report.cluster_of_class[c]},
                       {"tp", s.tp},
                       {"fp", s.fp},
                       {"fn", s.fn},
                       {"iou", s.iou},
                       {"f1", s.f1}});
  }
  j["per_class"] = classes;
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index c = 0; c < report.confusion.counts.rows(); ++c) {
    std::vector<std::int64_t> row(report.confusion.counts.cols());
    for (Eigen::Index k = 0; k < report.confusion.counts.cols(); ++k) row[k] = report.confusion.counts(c, k);
    rows.push_back(row);
  }
  j["confusion"] = rows;
  return j;
}

std::string report_to_csv(const EvalReport& report) {
  std::ostringstream out;
  out << std::setprecision(10);
  out << "class,cluster,tp,fp,fn,iou,f1\n";
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const auto& s = report.per_class[c];
    out << c << ',' << report.cluster_of_class[c] << ',' << s.tp << ',' << s.fp << ',' << s.fn << ',' << s.iou << ','
        << s.f1 << '\n';
  }
  return out.str();
}

std::string report_to_svg(const EvalReport& report) {
  const int bar_w = 32;
  const int gap = 8;
  const int plot_h = 200;
  const int margin = 30;
  const int n = static_cast<int>(report.per_class.size());
  const int width = 2 * margin + n * (bar_w + gap);
  const int height = plot_h + 2 * margin;
  std::ostringstream out;
  out << std::fixed << std::setprecision(1);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  out << "<text x=\"" << margin << "\" y=\"18\" font-size=\"12\">per-class IoU (mIoU " << std::setprecision(4)
      << report.miou << ")</text>\n"
      << std::setprecision(1);
  out << "<line x1=\"" << margin << "\" y1=\"" << margin + plot_h << "\" x2=\"" << width - margin << "\" y2=\""
      << margin + plot_h << "\" stroke=\"black\"/>\n";
  for (int c = 0; c < n; ++c) {
    const double h = report.per_class[c].iou * plot_h;
    const int x = margin + c * (bar_w + gap);
    out << "<rect x=\"" << x << "\" y=\"" << margin + plot_h - h << "\" width=\"" << bar_w << "\" height=\"" << h
        << "\" fill=\"steelblue\"/>\n";
    out << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << height - 12 << "\" font-size=\"10\" text-anchor=\"middle\">"
        << c << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace patchseg
