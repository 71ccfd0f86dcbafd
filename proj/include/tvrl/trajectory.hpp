#pragma once

#include <Eigen/Eigenvalues>
#include <fstream>

#include "tvrl/evaluation.hpp"
#include "tvrl/viz.hpp"

namespace tvrl {

struct TrajectoryResult {
  std::vector<int> frame_index;
  std::vector<double> time;
  Mat<double> coords;  // T x 2, centered; columns ordered by eigenvalue
  bool degenerate = false;
  double variance_share = 0.0;  // top-2 eigenvalue share of total variance
};

/// Per-frame temporal-encoder output tokens of a full sequence, averaged over
/// 50%-overlap sliding windows, projected onto the top-2 principal
/// components. Coordinates are centered; each axis is sign-normalized so its
/// largest-magnitude entry is positive. All-identical tokens degenerate to
/// zeros with a warning flag.
template <class T>
TrajectoryResult export_trajectory(Model<T>& model, const SequenceRecord& rec,
                                   const std::string& csv_path = "",
                                   const std::string& png_path = "") {
  if (rec.length() < 3)
    throw contract_error("export_trajectory: need at least 3 frames");
  const int cap = model.config().clip_capacity;
  const int t_len = rec.length();

  FeatureCache<T> cache;
  const Mat<T>& feats = cache.get(model, rec, 0);
  Mat<double> tokens = Mat<double>::Zero(t_len, model.config().hidden_dim);
  std::vector<int> cover(t_len, 0);
  for (int start : sliding_windows(t_len, cap)) {
    detail::WindowSpec w = detail::window_spec(rec, start, cap);
    Mat<T> stacked(w.valid, feats.cols());
    for (int k = 0; k < w.valid; ++k) stacked.row(k) = feats.row(w.feature_rows[k]);
    ag::ClipLayout layout;
    layout.token_base = 0;
    layout.valid = w.valid;
    ag::Tape<T> tape(false);
    ag::Var<T> tok = tape.constant(stacked);
    ag::Var<T> te = nullptr;
    if (model.config().use_time_embedding) te = model.te_forward(tape, w.rel_times);
    ag::Var<T> full = model.temporal_forward(tape, tok, {layout},
                                             model.pretrain_cls(tape), te);
    for (int k = 0; k < w.valid; ++k) {
      tokens.row(start + k) +=
          full->value.row(1 + k).template cast<double>();
      cover[start + k] += 1;
    }
  }
  for (int i = 0; i < t_len; ++i) tokens.row(i) /= static_cast<double>(cover[i]);

  TrajectoryResult out;
  out.frame_index.resize(t_len);
  out.time = rec.timestamps;
  for (int i = 0; i < t_len; ++i) out.frame_index[i] = i;
  out.coords = Mat<double>::Zero(t_len, 2);

  Mat<double> centered = tokens.rowwise() - tokens.colwise().mean();
  Mat<double> cov = centered.transpose() * centered /
                    static_cast<double>(std::max(1, t_len - 1));
  double total_var = cov.trace();
  if (total_var < 1e-18) {
    out.degenerate = true;
  } else {
    Eigen::SelfAdjointEigenSolver<Mat<double>> solver(cov);
    const auto& vals = solver.eigenvalues();   // ascending
    const auto& vecs = solver.eigenvectors();  // columns
    const int d = static_cast<int>(vals.size());
    for (int axis = 0; axis < 2; ++axis) {
      VecX<double> v = vecs.col(d - 1 - axis);
      out.coords.col(axis) = centered * v;
      // sign convention: largest-|coordinate| entry is positive
      int arg = 0;
      for (int i = 1; i < t_len; ++i)
        if (std::abs(out.coords(i, axis)) > std::abs(out.coords(arg, axis))) arg = i;
      if (out.coords(arg, axis) < 0) out.coords.col(axis) = -out.coords.col(axis);
    }
    out.variance_share = (vals(d - 1) + vals(d - 2)) / total_var;
  }

  if (!csv_path.empty()) {
    std::ofstream csv(csv_path);
    if (!csv) throw io_error("cannot write " + csv_path);
    csv << "frame_index,time,pc1,pc2\n";
    char buf[160];
    for (int i = 0; i < t_len; ++i) {
      std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g\n", i, out.time[i],
                    out.coords(i, 0), out.coords(i, 1));
      csv << buf;
    }
  }
  if (!png_path.empty()) {
    std::vector<std::pair<double, double>> pts;
    for (int i = 0; i < t_len; ++i)
      pts.emplace_back(out.coords(i, 0), out.coords(i, 1));
    viz::render_trajectory_plot(png_path, pts);
  }
  return out;
}

}  // namespace tvrl
