#pragma once

#include "mrrag/error.hpp"
#include "mrrag/llm/backend.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mrrag::corpus {

/// Cosine similarity in double precision; a zero-norm side scores 0.
inline double cosine(std::span<const float> a, std::span<const float> b) {
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    const std::size_t n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

/// Immutable row-major store of fixed-dimension vectors keyed by chunk id.
class VectorStore {
public:
    VectorStore() = default;

    VectorStore(std::size_t dim, std::vector<std::string> ids, std::vector<float> data)
        : dim_(dim), ids_(std::move(ids)), data_(std::move(data)) {
        if (dim_ == 0 && !ids_.empty()) throw Error("vector store dimension must be positive");
        if (data_.size() != ids_.size() * dim_) throw Error("vector store data does not match rows x dim");
    }

    static VectorStore from_rows(std::vector<std::string> ids, const std::vector<llm::Embedding>& rows) {
        if (ids.size() != rows.size()) throw Error("one vector per id required");
        if (rows.empty()) return {};
        const std::size_t dim = rows.front().size();
        llm::check_dimensions(rows, dim);
        std::vector<float> data;
        data.reserve(rows.size() * dim);
        for (const auto& r : rows) data.insert(data.end(), r.begin(), r.end());
        return VectorStore(dim, std::move(ids), std::move(data));
    }

    std::size_t size() const { return ids_.size(); }
    bool empty() const { return ids_.empty(); }
    std::size_t dim() const { return dim_; }
    const std::string& id(std::size_t row) const { return ids_.at(row); }
    const std::vector<std::string>& ids() const { return ids_; }

    std::span<const float> row(std::size_t i) const {
        return std::span<const float>(data_).subspan(i * dim_, dim_);
    }

    /// Writes `<stem>.f32` (little-endian float32, row-major) and `<stem>.json` {rows, dim}.
    void save(const std::filesystem::path& dir, const std::string& stem) const {
        std::ofstream bin(dir / (stem + ".f32"), std::ios::binary);
        if (!bin) throw IoError("cannot write " + (dir / (stem + ".f32")).string());
        for (float v : data_) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            if constexpr (std::endian::native == std::endian::big) bits = byteswap32(bits);
            char bytes[4];
            std::memcpy(bytes, &bits, 4);
            bin.write(bytes, 4);
        }
        if (!bin) throw IoError("failed writing embeddings");
        std::ofstream side(dir / (stem + ".json"));
        side << nlohmann::json{{"rows", size()}, {"dim", dim_}}.dump(2) << '\n';
        if (!side) throw IoError("failed writing embeddings sidecar");
    }

    static VectorStore load(const std::filesystem::path& dir, const std::string& stem, std::vector<std::string> ids) {
        std::ifstream side(dir / (stem + ".json"));
        if (!side) throw IoError("missing " + (dir / (stem + ".json")).string());
        const auto meta = nlohmann::json::parse(side);
        const auto rows = meta.at("rows").get<std::size_t>();
        const auto dim = meta.at("dim").get<std::size_t>();
        if (rows != ids.size()) {
            throw IoError("embedding rows (" + std::to_string(rows) + ") do not match chunk count (" +
                          std::to_string(ids.size()) + ")");
        }
        std::ifstream bin(dir / (stem + ".f32"), std::ios::binary);
        if (!bin) throw IoError("missing " + (dir / (stem + ".f32")).string());
        std::vector<float> data(rows * dim);
        for (auto& v : data) {
            char bytes[4];
            if (!bin.read(bytes, 4)) throw IoError("truncated embeddings file");
            std::uint32_t bits;
            std::memcpy(&bits, bytes, 4);
            if constexpr (std::endian::native == std::endian::big) bits = byteswap32(bits);
            std::memcpy(&v, &bits, sizeof v);
        }
        return VectorStore(rows == 0 ? 0 : dim, std::move(ids), std::move(data));
    }

private:
    static std::uint32_t byteswap32(std::uint32_t x) {
        return (x >> 24) | ((x >> 8) & 0xFF00U) | ((x << 8) & 0xFF0000U) | (x << 24);
    }

    std::size_t dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<float> data_;
};

} // namespace mrrag::corpus
