#pragma once

// Model checkpoint: a versioned, line-oriented text file holding the network
// and the scalers needed for inference. Numbers use the shortest decimal
// form that reads back to the identical double.
//
//   deepser-checkpoint 1
//   input_dim <d>
//   activation relu|tanh
//   hidden <L> <s1> ... <sL>
//   features <d> <name1> ... <named>
//   scaler feature|label zscore|minmax <dims> <fitted_rows>
//   offset <dims values>
//   scale <dims values>
//   (one scaler block for features, then one for labels)
//   dense <rows> <cols>        (hidden layers in order, then the 3 heads)
//   <row values>               (rows lines of weights)
//   <cols bias values>
//   end

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "deepser/csv.hpp"
#include "deepser/data.hpp"
#include "deepser/error.hpp"
#include "deepser/nn.hpp"

namespace deepser {

struct Checkpoint {
  MlpModel model;
  Scaler feature_scaler;
  Scaler label_scaler;
  std::vector<std::string> feature_names;
};

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void write_values(std::ostream& out, const double* data, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) out << (i ? " " : "") << csv::format_double(data[i]);
  out << '\n';
}

inline void write_scaler(std::ostream& out, const char* role, const Scaler& s) {
  out << "scaler " << role << ' ' << (s.kind == ScalerKind::ZScore ? "zscore" : "minmax") << ' ' << s.dims() << ' '
      << s.fitted_rows << '\n';
  out << "offset ";
  write_values(out, s.offset.data(), s.offset.size());
  out << "scale ";
  write_values(out, s.scale.data(), s.scale.size());
}

inline void write_dense(std::ostream& out, const Dense& d) {
  out << "dense " << d.weights.rows() << ' ' << d.weights.cols() << '\n';
  for (Eigen::Index r = 0; r < d.weights.rows(); ++r) {
    const Eigen::RowVectorXd row = d.weights.row(r);
    write_values(out, row.data(), row.size());
  }
  write_values(out, d.bias.data(), d.bias.size());
}

class CheckpointReader {
 public:
  explicit CheckpointReader(std::istream& in) : in_(in) {}

  std::string word() {
    std::string w;
    if (!(in_ >> w)) fail("unexpected end of file");
    return w;
  }
  void expect(const std::string& w) {
    const auto got = word();
    if (got != w) fail("expected '" + w + "', got '" + got + "'");
  }
  long integer() {
    const auto w = word();
    const auto v = csv::parse_long(w);
    if (!v || *v < 0) fail("bad integer '" + w + "'");
    return *v;
  }
  double number() {
    const auto w = word();
    const auto v = csv::parse_double(w);
    if (!v) fail("bad number '" + w + "'");
    return *v;
  }
  [[noreturn]] void fail(const std::string& what) { throw Error("malformed checkpoint: " + what); }

 private:
  std::istream& in_;
};

inline Scaler read_scaler(CheckpointReader& r, const char* role) {
  r.expect("scaler");
  r.expect(role);
  Scaler s;
  const auto kind = r.word();
  if (kind == "zscore") s.kind = ScalerKind::ZScore;
  else if (kind == "minmax") s.kind = ScalerKind::MinMax;
  else r.fail("unknown scaler kind '" + kind + "'");
  const auto dims = r.integer();
  s.fitted_rows = static_cast<std::size_t>(r.integer());
  s.offset.resize(dims);
  s.scale.resize(dims);
  r.expect("offset");
  for (long i = 0; i < dims; ++i) s.offset[i] = r.number();
  r.expect("scale");
  for (long i = 0; i < dims; ++i) s.scale[i] = r.number();
  return s;
}

inline Dense read_dense(CheckpointReader& r, std::size_t rows, std::size_t cols) {
  r.expect("dense");
  if (static_cast<std::size_t>(r.integer()) != rows || static_cast<std::size_t>(r.integer()) != cols)
    r.fail("layer shape does not match the declared architecture");
  Dense d;
  d.weights.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < d.weights.rows(); ++i)
    for (Eigen::Index j = 0; j < d.weights.cols(); ++j) d.weights(i, j) = r.number();
  d.bias.resize(1, static_cast<Eigen::Index>(cols));
  for (Eigen::Index j = 0; j < d.bias.cols(); ++j) d.bias(0, j) = r.number();
  return d;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto& m = ck.model;
  std::ostringstream out;
  out << "deepser-checkpoint " << kCheckpointVersion << '\n';
  out << "input_dim " << m.input_dim << '\n';
  out << "activation " << to_string(m.activation) << '\n';
  out << "hidden " << m.hidden_sizes.size();
  for (auto s : m.hidden_sizes) out << ' ' << s;
  out << '\n';
  out << "features " << ck.feature_names.size();
  for (const auto& n : ck.feature_names) out << ' ' << n;
  out << '\n';
  detail::write_scaler(out, "feature", ck.feature_scaler);
  detail::write_scaler(out, "label", ck.label_scaler);
  for (const auto& l : m.hidden) detail::write_dense(out, l);
  for (const auto& h : m.heads) detail::write_dense(out, h);
  out << "end\n";

  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write checkpoint " + path.string());
  f << out.str();
  if (!f) throw Error("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  detail::CheckpointReader r(in);
  r.expect("deepser-checkpoint");
  if (r.integer() != kCheckpointVersion) r.fail("unsupported version");
  Checkpoint ck;
  auto& m = ck.model;
  r.expect("input_dim");
  m.input_dim = static_cast<std::size_t>(r.integer());
  r.expect("activation");
  try {
    m.activation = parse_activation(r.word());
  } catch (const std::invalid_argument& e) {
    r.fail(e.what());
  }
  r.expect("hidden");
  const auto layers = r.integer();
  for (long i = 0; i < layers; ++i) m.hidden_sizes.push_back(static_cast<std::size_t>(r.integer()));
  r.expect("features");
  const auto n_features = r.integer();
  for (long i = 0; i < n_features; ++i) ck.feature_names.push_back(r.word());
  ck.feature_scaler = detail::read_scaler(r, "feature");
  ck.label_scaler = detail::read_scaler(r, "label");
  std::size_t fan_in = m.input_dim;
  for (auto s : m.hidden_sizes) {
    m.hidden.push_back(detail::read_dense(r, fan_in, s));
    fan_in = s;
  }
  for (auto& h : m.heads) h = detail::read_dense(r, fan_in, 1);
  r.expect("end");
  if (static_cast<std::size_t>(ck.feature_scaler.dims()) != m.input_dim) r.fail("feature scaler width != input_dim");
  if (ck.label_scaler.dims() != 3) r.fail("label scaler must have 3 dimensions");
  return ck;
}

}  // namespace deepser
