#include "maskpos/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace maskpos::io {

namespace fs = std::filesystem;

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double parse_double(std::string_view field, std::size_t line) {
  field = trim(field);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double v = 0.0;
  auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || res.ec != std::errc{} || res.ptr != field.data() + field.size())
    throw Error(ErrorKind::io, "CSV line " + std::to_string(line) + ": cannot parse '" + std::string(field) + "'");
  return v;
}

std::string layer_file(std::size_t layer, const std::string& stem) {
  return "layer" + std::to_string(layer) + "_" + stem + ".csv";
}

}  // namespace

std::string format_csv(const Matrix& m) {
  std::string out;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += format_double(m(i, j));
    }
    out += '\n';
  }
  return out;
}

Matrix parse_csv(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = trim(line);
    if (view.empty()) continue;
    std::vector<double> row;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = view.find(',', start);
      row.push_back(parse_double(view.substr(start, comma == std::string_view::npos ? view.npos : comma - start), lineno));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw Error(ErrorKind::io, "CSV line " + std::to_string(lineno) + ": ragged row");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorKind::io, "CSV contains no rows");
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  return m;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

void write_csv(const Matrix& m, const fs::path& path) { write_file(path, format_csv(m)); }

Matrix read_csv(const fs::path& path) { return parse_csv(read_file(path)); }

std::vector<std::uint8_t> render_pgm(const Matrix& m, double q_low, double q_high, bool causal) {
  if (m.empty()) throw Error(ErrorKind::config, "render: empty matrix");
  if (causal && m.rows() != m.cols()) throw Error(ErrorKind::config, "render: causal mask needs a square matrix");
  const Matrix clipped = experiments::quantile_clip(m, causal, q_low, q_high);
  auto valid = [&](std::size_t i, std::size_t j) { return !causal || j <= i; };

  double lo = INFINITY;
  double hi = -INFINITY;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      if (valid(i, j)) {
        lo = std::min(lo, clipped(i, j));
        hi = std::max(hi, clipped(i, j));
      }

  const std::string header = "P5\n" + std::to_string(m.cols()) + " " + std::to_string(m.rows()) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(header.size() + m.rows() * m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      std::uint8_t px = 0;
      if (valid(i, j)) {
        if (!(hi > lo)) {
          px = 255;
        } else {
          const double t = (clipped(i, j) - lo) / (hi - lo) * 255.0;
          px = static_cast<std::uint8_t>(std::clamp(std::floor(t + 0.5), 0.0, 255.0));
        }
      }
      bytes.push_back(px);
    }
  }
  return bytes;
}

void write_pgm(const Matrix& m, const fs::path& path, double q_low, double q_high, bool causal) {
  const auto bytes = render_pgm(m, q_low, q_high, causal);
  write_file(path, std::string(bytes.begin(), bytes.end()));
}

std::string format_manifest(const Manifest& manifest) {
  std::string out;
  for (const auto& [k, v] : manifest) out += k + "=" + v + "\n";
  return out;
}

Manifest parse_manifest(const std::string& text) {
  Manifest m;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::string_view view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) throw Error(ErrorKind::io, "manifest line without '=': " + std::string(view));
    m[std::string(trim(view.substr(0, eq)))] = std::string(trim(view.substr(eq + 1)));
  }
  return m;
}

Manifest manifest_for(const experiments::ExperimentSpec& spec) {
  Manifest m;
  m["format_version"] = "1";
  m["mode"] = experiments::to_string(spec.mode);
  m["n"] = std::to_string(spec.n);
  m["d"] = std::to_string(spec.d);
  m["alpha"] = format_double(spec.alpha);
  m["layers"] = std::to_string(spec.layers);
  m["trials"] = std::to_string(spec.trials);
  m["seed"] = std::to_string(spec.master_seed);
  m["norm"] = experiments::to_string(spec.norm);
  m["scale"] = experiments::to_string(spec.scale);
  m["residual"] = spec.residual ? "on" : "off";
  m["masked"] = spec.masked() ? "causal" : "none";
  if (spec.mode != experiments::Mode::nope)
    m["theta"] = format_double(spec.theta.value_or(experiments::kDefaultTheta));
  return m;
}

experiments::ExperimentSpec spec_from_manifest(const Manifest& manifest) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = manifest.find(key);
    if (it == manifest.end()) throw Error(ErrorKind::io, "manifest missing key '" + key + "'");
    return it->second;
  };
  auto to_size = [&](const std::string& key) {
    const std::string& s = get(key);
    std::uint64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
      throw Error(ErrorKind::io, "manifest key '" + key + "' is not an integer");
    return v;
  };
  experiments::ExperimentSpec spec;
  spec.mode = experiments::parse_mode(get("mode"));
  spec.n = to_size("n");
  spec.d = to_size("d");
  spec.alpha = parse_double(get("alpha"), 0);
  spec.layers = to_size("layers");
  spec.trials = to_size("trials");
  spec.master_seed = to_size("seed");
  spec.norm = experiments::parse_norm(get("norm"));
  spec.scale = experiments::parse_scale(get("scale"));
  spec.residual = get("residual") == "on";
  if (auto it = manifest.find("theta"); it != manifest.end()) spec.theta = parse_double(it->second, 0);
  spec.validate();
  return spec;
}

std::vector<fs::path> simulate_to_dir(const experiments::ExperimentSpec& spec, const fs::path& dir, bool force,
                                      unsigned workers) {
  spec.validate();
  const bool rope = spec.mode != experiments::Mode::nope;

  experiments::RunOptions opts;
  opts.workers = workers;

  // File names are fixed before running so an overwrite refusal costs nothing.
  std::vector<std::string> names;
  for (std::size_t k = 1; k <= spec.layers; ++k) {
    names.push_back(layer_file(k, "mean"));
    names.push_back(layer_file(k, "stderr"));
    names.push_back(layer_file(k, "scores_mean"));
    names.push_back(layer_file(k, "scores_stderr"));
    if (rope) {
      names.push_back(layer_file(k, "dn_mean"));
      names.push_back(layer_file(k, "dn_stderr"));
      names.push_back(layer_file(k, "scores_dn_mean"));
      names.push_back(layer_file(k, "scores_dn_stderr"));
    }
  }
  if (!rope && spec.layers >= 2) {
    names.push_back(layer_file(2, "gram_mean"));
    names.push_back(layer_file(2, "gram_stderr"));
  }
  names.push_back("manifest.txt");

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
  if (!force)
    for (const auto& name : names)
      if (fs::exists(dir / name))
        throw Error(ErrorKind::io, (dir / name).string() + " exists; pass --force to overwrite");

  const auto stats = experiments::run_experiment(spec, opts);

  std::vector<fs::path> written;
  auto emit = [&](const std::string& name, const Matrix& m) {
    write_csv(m, dir / name);
    written.push_back(dir / name);
  };
  for (std::size_t k = 1; k <= spec.layers; ++k) {
    const auto& ls = stats.layers[k - 1];
    emit(layer_file(k, "mean"), ls.attention.mean);
    emit(layer_file(k, "stderr"), ls.attention.std_error);
    emit(layer_file(k, "scores_mean"), ls.scores.mean);
    emit(layer_file(k, "scores_stderr"), ls.scores.std_error);
    if (rope) {
      emit(layer_file(k, "dn_mean"), ls.attention_dn.mean);
      emit(layer_file(k, "dn_stderr"), ls.attention_dn.std_error);
      emit(layer_file(k, "scores_dn_mean"), ls.scores_dn.mean);
      emit(layer_file(k, "scores_dn_stderr"), ls.scores_dn.std_error);
    }
  }
  if (!rope && spec.layers >= 2) {
    emit(layer_file(2, "gram_mean"), stats.layers[1].gram.mean);
    emit(layer_file(2, "gram_stderr"), stats.layers[1].gram.std_error);
  }
  write_file(dir / "manifest.txt", format_manifest(manifest_for(spec)));
  written.push_back(dir / "manifest.txt");
  return written;
}

}  // namespace maskpos::io
