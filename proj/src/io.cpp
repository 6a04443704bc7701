#include "selfheal/io.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

namespace selfheal {

namespace {

const Json& member(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object()) throw ParseError(where + ": expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(where + ": missing field '" + key + "'");
  return *it;
}

std::string string_field(const Json& j, const char* key, const std::string& where) {
  const Json& v = member(j, key, where);
  if (!v.is_string()) throw ParseError(where + "." + key + ": expected a string");
  return v.get<std::string>();
}

bool bool_field(const Json& j, const char* key, const std::string& where) {
  const Json& v = member(j, key, where);
  if (!v.is_boolean()) throw ParseError(where + "." + key + ": expected a boolean");
  return v.get<bool>();
}

void check_format(const Json& doc, const std::string& format, const std::string& where) {
  const std::string found = string_field(doc, "format", where);
  if (found != format) throw ParseError(where + ": expected format '" + format + "', found '" + found + "'");
  const Json& v = member(doc, "version", where);
  if (!v.is_number_integer() || v.get<int>() != kFormatVersion)
    throw ParseError(where + ": unsupported version " + v.dump());
}

Json layer_to_json(const Layer& l) {
  Json j;
  j["activation"] = activation_name(l.activation);
  j["residual_skip"] = l.residual_skip;
  j["weight"] = matrix_to_json(l.weight);
  j["bias"] = vector_to_json(l.bias);
  return j;
}

Layer layer_from_json(const Json& j, const std::string& where) {
  Layer l;
  try {
    l.activation = parse_activation(string_field(j, "activation", where));
  } catch (const ParseError& e) {
    throw ParseError(where + ": " + e.what());
  }
  l.residual_skip = bool_field(j, "residual_skip", where);
  l.weight = matrix_from_json(member(j, "weight", where), where + ".weight");
  l.bias = vector_from_json(member(j, "bias", where), where + ".bias");
  try {
    l.validate();
  } catch (const Error& e) {
    throw ParseError(where + ": " + e.what());
  }
  return l;
}

}  // namespace

Json number_to_json(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double number_from_json(const Json& j, const std::string& where) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    // decimal strings are accepted too
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (!s.empty() && *end == '\0' && std::isfinite(v)) return v;
  }
  throw ParseError(where + ": expected a number, found " + j.dump());
}

Json vector_to_json(const Vec64& v) {
  Json j = Json::array();
  for (double x : v) j.push_back(number_to_json(x));
  return j;
}

Vec64 vector_from_json(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ParseError(where + ": expected an array");
  Vec64 v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[i] = number_from_json(j[i], where + "[" + std::to_string(i) + "]");
  return v;
}

Json series_to_json(const std::vector<double>& v) {
  Json j = Json::array();
  for (double x : v) j.push_back(number_to_json(x));
  return j;
}

Json matrix_to_json(const Mat64& m) {
  Json j = Json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) j.push_back(vector_to_json(m.row(r)));
  return j;
}

Mat64 matrix_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ParseError(where + ": expected a nonempty array of rows");
  const std::size_t rows = j.size();
  std::size_t cols = 0;
  std::vector<double> data;
  for (std::size_t r = 0; r < rows; ++r) {
    const Vec64 row = vector_from_json(j[r], where + "[" + std::to_string(r) + "]");
    if (r == 0) cols = row.size();
    if (row.size() != cols || cols == 0)
      throw ParseError(where + ": row " + std::to_string(r) + " has " + std::to_string(row.size()) +
                       " entries, expected " + std::to_string(cols));
    data.insert(data.end(), row.begin(), row.end());
  }
  return Mat64(rows, cols, std::move(data));
}

Json net_to_json(const DynamicalNet& net) {
  Json j;
  j["layers"] = Json::array();
  for (const auto& l : net.layers) j["layers"].push_back(layer_to_json(l));
  j["head"] = layer_to_json(net.head);
  return j;
}

DynamicalNet net_from_json(const Json& j, const std::string& where) {
  DynamicalNet net;
  const Json& layers = member(j, "layers", where);
  if (!layers.is_array()) throw ParseError(where + ".layers: expected an array");
  for (std::size_t t = 0; t < layers.size(); ++t)
    net.layers.push_back(layer_from_json(layers[t], where + ".layers[" + std::to_string(t) + "]"));
  net.head = layer_from_json(member(j, "head", where), where + ".head");
  try {
    net.validate();
  } catch (const Error& e) {
    throw ParseError(where + ": " + e.what());
  }
  return net;
}

Json embedding_to_json(const Embedding& e) {
  Json j;
  j["kind"] = embedding_kind(e);
  if (const auto* lin = std::get_if<LinearSubspaceEmbedding>(&e)) {
    j["mean"] = vector_to_json(lin->mean);
    j["basis"] = matrix_to_json(lin->basis);
    j["eigenvalues"] = vector_to_json(lin->eigenvalues);
    j["degenerate"] = lin->degenerate;
  } else if (const auto* ae = std::get_if<AutoencoderEmbedding>(&e)) {
    j["encoder"] = net_to_json(ae->encoder);
    j["decoder"] = net_to_json(ae->decoder);
    j["train_error"] = number_to_json(ae->train_error);
  } else {
    const auto& q = std::get<QuadraticSubmersion>(e);
    j["curvature"] = number_to_json(q.curvature);
    j["center"] = vector_to_json(q.center);
    j["normal"] = vector_to_json(q.normal);
  }
  return j;
}

Embedding embedding_from_json(const Json& j, const std::string& where) {
  const std::string kind = string_field(j, "kind", where);
  Embedding out;
  if (kind == "linear") {
    LinearSubspaceEmbedding lin;
    lin.mean = vector_from_json(member(j, "mean", where), where + ".mean");
    lin.basis = matrix_from_json(member(j, "basis", where), where + ".basis");
    lin.eigenvalues = vector_from_json(member(j, "eigenvalues", where), where + ".eigenvalues");
    lin.degenerate = bool_field(j, "degenerate", where);
    out = std::move(lin);
  } else if (kind == "autoencoder") {
    AutoencoderEmbedding ae;
    ae.encoder = net_from_json(member(j, "encoder", where), where + ".encoder");
    ae.decoder = net_from_json(member(j, "decoder", where), where + ".decoder");
    ae.train_error = number_from_json(member(j, "train_error", where), where + ".train_error");
    out = std::move(ae);
  } else if (kind == "quadratic") {
    QuadraticSubmersion q;
    q.curvature = number_from_json(member(j, "curvature", where), where + ".curvature");
    q.center = vector_from_json(member(j, "center", where), where + ".center");
    q.normal = vector_from_json(member(j, "normal", where), where + ".normal");
    out = std::move(q);
  } else {
    throw ParseError(where + ": unknown embedding kind '" + kind + "'");
  }
  try {
    validate_embedding(out);
  } catch (const Error& e) {
    throw ParseError(where + ": " + e.what());
  }
  return out;
}

Json model_document(const DynamicalNet& net) {
  Json doc;
  doc["format"] = "selfheal.model";
  doc["version"] = kFormatVersion;
  const Json body = net_to_json(net);
  doc["layers"] = body["layers"];
  doc["head"] = body["head"];
  return doc;
}

DynamicalNet model_from_document(const Json& doc, const std::string& where) {
  check_format(doc, "selfheal.model", where);
  return net_from_json(doc, where);
}

Json embeddings_document(const std::vector<Embedding>& embeddings) {
  Json doc;
  doc["format"] = "selfheal.embeddings";
  doc["version"] = kFormatVersion;
  doc["layers"] = Json::array();
  for (const auto& e : embeddings) doc["layers"].push_back(embedding_to_json(e));
  return doc;
}

std::vector<Embedding> embeddings_from_document(const Json& doc, const std::string& where) {
  check_format(doc, "selfheal.embeddings", where);
  const Json& layers = member(doc, "layers", where);
  if (!layers.is_array()) throw ParseError(where + ".layers: expected an array");
  std::vector<Embedding> out;
  for (std::size_t t = 0; t < layers.size(); ++t)
    out.push_back(embedding_from_json(layers[t], where + ".layers[" + std::to_string(t) + "]"));
  return out;
}

Json certificate_to_json(const BoundCertificate& c) {
  Json j;
  j["kind"] = "linear";
  j["alpha"] = number_to_json(c.alpha);
  j["holds"] = c.holds;
  j["vacuous"] = c.vacuous;
  j["gamma_t"] = series_to_json(c.gamma_t);
  j["kappa_t"] = series_to_json(c.kappa_t);
  j["bound_sq_t"] = series_to_json(c.bound_t);
  j["empirical_sq_t"] = series_to_json(c.empirical_t);
  return j;
}

Json certificate_to_json(const NonlinearCertificate& c) {
  Json j;
  j["kind"] = "nonlinear";
  j["certified"] = c.certified;
  j["reason"] = c.reason;
  j["holds"] = c.holds;
  j["vacuous"] = c.vacuous;
  j["alpha"] = number_to_json(c.alpha);
  j["eps"] = number_to_json(c.eps);
  j["eps_threshold"] = number_to_json(c.eps_threshold);
  j["theta_norm"] = series_to_json(c.theta_norm);
  j["theta_bar_norm"] = series_to_json(c.theta_bar_norm);
  j["gamma_t"] = series_to_json(c.gamma_t);
  j["kappa_t"] = series_to_json(c.kappa_t);
  j["sigma_t"] = series_to_json(c.sigma_t);
  j["k_t"] = series_to_json(c.k_t);
  j["beta_t"] = series_to_json(c.beta_t);
  j["delta_t"] = series_to_json(c.delta_t);
  j["linear_part_t"] = series_to_json(c.linear_part_t);
  j["linearization_t"] = series_to_json(c.linearization_t);
  j["bound_t"] = series_to_json(c.bound_t);
  j["empirical_t"] = series_to_json(c.empirical_t);
  j["linearization_error_t"] = series_to_json(c.linearization_error_t);
  return j;
}

Json certificate_to_json(const LinearizationSeries& s) {
  Json j;
  j["kind"] = "linearization";
  j["holds"] = s.holds;
  j["eps_threshold"] = number_to_json(s.eps_threshold);
  j["e_t"] = series_to_json(s.e_t);
  j["bound_t"] = series_to_json(s.bound_t);
  return j;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(path.string() + ": cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw Error(path.string() + ": write failed");
}

Json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": invalid JSON (" + e.what() + ")");
  }
}

void write_json_file(const std::filesystem::path& path, const Json& doc) {
  write_text_file(path, doc.dump(2) + "\n");
}

void save_model(const std::filesystem::path& path, const DynamicalNet& net) {
  write_json_file(path, model_document(net));
}

DynamicalNet load_model(const std::filesystem::path& path) {
  return model_from_document(read_json_file(path), path.string());
}

void save_embeddings(const std::filesystem::path& path, const std::vector<Embedding>& embeddings) {
  write_json_file(path, embeddings_document(embeddings));
}

std::vector<Embedding> load_embeddings(const std::filesystem::path& path) {
  return embeddings_from_document(read_json_file(path), path.string());
}

std::string dataset_to_csv(const LabeledDataset& data) {
  data.validate();
  std::string out;
  const std::size_t d = data.dim();
  for (std::size_t i = 0; i < d; ++i) out += "x" + std::to_string(i + 1) + ",";
  out += "label,manifold_tag\n";
  for (std::size_t k = 0; k < data.size(); ++k) {
    for (double v : data.points[k]) out += format_double(v) + ",";
    out += std::to_string(data.labels[k]) + ",";
    out += data.manifold_tags.empty() ? "-1" : std::to_string(data.manifold_tags[k]);
    out += "\n";
  }
  return out;
}

LabeledDataset dataset_from_csv(const std::string& text, const std::string& where) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(where + ": empty file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 3 || header[header.size() - 2] != "label" || header.back() != "manifold_tag")
    throw ParseError(where + ": header must be x1,...,xd,label,manifold_tag");
  const std::size_t d = header.size() - 2;
  for (std::size_t i = 0; i < d; ++i)
    if (header[i] != "x" + std::to_string(i + 1))
      throw ParseError(where + ": header column " + std::to_string(i + 1) + " is '" + header[i] + "'");

  LabeledDataset data;
  bool any_tag = false;
  std::vector<int> tags;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string at = where + ":" + std::to_string(line_no);
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != d + 2)
      throw ParseError(at + ": expected " + std::to_string(d + 2) + " fields, found " + std::to_string(cells.size()));
    Vec64 x(d);
    for (std::size_t i = 0; i < d; ++i) {
      char* end = nullptr;
      errno = 0;
      x[i] = std::strtod(cells[i].c_str(), &end);
      if (cells[i].empty() || *end != '\0' || (errno == ERANGE && std::isinf(x[i])))
        throw ParseError(at + ": bad number '" + cells[i] + "' in column x" + std::to_string(i + 1));
    }
    char* end = nullptr;
    const long label = std::strtol(cells[d].c_str(), &end, 10);
    if (cells[d].empty() || *end != '\0' || label < 0) throw ParseError(at + ": bad label '" + cells[d] + "'");
    const long tag = std::strtol(cells[d + 1].c_str(), &end, 10);
    if (cells[d + 1].empty() || *end != '\0') throw ParseError(at + ": bad manifold tag '" + cells[d + 1] + "'");
    if (tag >= 0) any_tag = true;
    data.points.push_back(std::move(x));
    data.labels.push_back(static_cast<std::size_t>(label));
    tags.push_back(static_cast<int>(tag));
  }
  if (any_tag) data.manifold_tags = std::move(tags);
  return data;
}

void save_dataset(const std::filesystem::path& path, const LabeledDataset& data) {
  write_text_file(path, dataset_to_csv(data));
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  return dataset_from_csv(read_text_file(path), path.string());
}

}  // namespace selfheal
