#pragma once

// Artifact formats. Models, embeddings and certificates are JSON documents
// tagged with a format name and version; datasets are CSV with a
// x1,...,xd,label,manifold_tag header. Finite doubles round-trip exactly;
// non-finite ones are written as the strings "inf", "-inf" and "nan".

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "selfheal/bounds.hpp"
#include "selfheal/data.hpp"
#include "selfheal/dynamics.hpp"
#include "selfheal/embedding.hpp"

namespace selfheal {

using Json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

Json number_to_json(double v);
double number_from_json(const Json& j, const std::string& where);
Json vector_to_json(const Vec64& v);
Vec64 vector_from_json(const Json& j, const std::string& where);
Json series_to_json(const std::vector<double>& v);
Json matrix_to_json(const Mat64& m);  // array of rows
Mat64 matrix_from_json(const Json& j, const std::string& where);

Json net_to_json(const DynamicalNet& net);
DynamicalNet net_from_json(const Json& j, const std::string& where);
Json embedding_to_json(const Embedding& e);
Embedding embedding_from_json(const Json& j, const std::string& where);

/// Model document: {"format": "selfheal.model", "version": 1, "layers": [...], "head": {...}}.
Json model_document(const DynamicalNet& net);
DynamicalNet model_from_document(const Json& doc, const std::string& where);

/// Embedding document: one embedding per layer.
Json embeddings_document(const std::vector<Embedding>& embeddings);
std::vector<Embedding> embeddings_from_document(const Json& doc, const std::string& where);

Json certificate_to_json(const BoundCertificate& c);
Json certificate_to_json(const NonlinearCertificate& c);
Json certificate_to_json(const LinearizationSeries& s);

/// Whole-file helpers. Unreadable files raise Error, malformed content
/// ParseError; both name the path.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);
Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& doc);

void save_model(const std::filesystem::path& path, const DynamicalNet& net);
DynamicalNet load_model(const std::filesystem::path& path);
void save_embeddings(const std::filesystem::path& path, const std::vector<Embedding>& embeddings);
std::vector<Embedding> load_embeddings(const std::filesystem::path& path);

std::string dataset_to_csv(const LabeledDataset& data);
LabeledDataset dataset_from_csv(const std::string& text, const std::string& where);
void save_dataset(const std::filesystem::path& path, const LabeledDataset& data);
LabeledDataset load_dataset(const std::filesystem::path& path);

}  // namespace selfheal
