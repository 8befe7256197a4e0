#pragma once

// File formats shared with the feature extractor:
//   * NPY v1.0 tensors ('<f4' or '|u1', C order)
//   * the scene manifest (JSON)
//   * class-index masks (binary PGM)

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "types.hpp"

namespace coninfer {

namespace fs = std::filesystem;

enum class DType { float32, uint8 };

inline std::size_t item_size(DType t) { return t == DType::float32 ? 4 : 1; }

inline std::size_t shape_product(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// An in-memory NPY tensor. Exactly one of the buffers is used, picked by dtype.
struct TensorFile {
    DType dtype = DType::float32;
    std::vector<std::size_t> shape;
    std::variant<std::vector<float>, std::vector<std::uint8_t>> data;

    std::size_t size() const {
        return std::visit([](const auto& v) { return v.size(); }, data);
    }
    const std::vector<float>& f32() const { return std::get<std::vector<float>>(data); }
    const std::vector<std::uint8_t>& u8() const { return std::get<std::vector<std::uint8_t>>(data); }

    /// Throws ShapeError if shape, dtype and buffer disagree.
    void validate() const {
        const bool tag_ok = (dtype == DType::float32) == std::holds_alternative<std::vector<float>>(data);
        if (!tag_ok) throw ShapeError("tensor dtype tag does not match its buffer type");
        if (shape_product(shape) != size()) {
            throw ShapeError("tensor shape product " + std::to_string(shape_product(shape)) +
                             " != element count " + std::to_string(size()));
        }
    }

    friend bool operator==(const TensorFile&, const TensorFile&) = default;
};

struct TensorHeader {
    DType dtype = DType::float32;
    std::vector<std::size_t> shape;
    std::size_t data_offset = 0;
};

namespace detail {

inline constexpr std::string_view npy_magic{"\x93NUMPY", 6};
// Spare header room numpy reserves so the leading axis can grow in place.
inline constexpr std::size_t npy_growth_digits = 21;
inline constexpr std::size_t npy_align = 64;

// Minimal reader for the Python-literal dict in an NPY header.
class NpyHeaderParser {
public:
    explicit NpyHeaderParser(std::string_view text) : s_(text) {}

    TensorHeader parse() {
        std::optional<std::string> descr;
        std::optional<bool> fortran;
        std::optional<std::vector<std::size_t>> shape;

        expect('{');
        while (true) {
            skip_ws();
            if (peek() == '}') {
                ++pos_;
                break;
            }
            const std::string key = parse_string();
            expect(':');
            if (key == "descr") {
                descr = parse_string();
            } else if (key == "fortran_order") {
                fortran = parse_bool();
            } else if (key == "shape") {
                shape = parse_tuple();
            } else {
                throw FormatError("npy header: unexpected key '" + key + "'");
            }
            skip_ws();
            if (peek() == ',') ++pos_;
        }
        skip_ws();
        if (pos_ != s_.size()) throw FormatError("npy header: trailing characters after dict");
        if (!descr || !fortran || !shape) throw FormatError("npy header: missing descr, fortran_order or shape");

        if (*fortran) throw UnsupportedError("npy: fortran_order=True is not supported");
        TensorHeader h;
        if (*descr == "<f4") {
            h.dtype = DType::float32;
        } else if (*descr == "|u1") {
            h.dtype = DType::uint8;
        } else {
            throw UnsupportedError("npy: unsupported dtype '" + *descr + "' (expected '<f4' or '|u1')");
        }
        h.shape = std::move(*shape);
        return h;
    }

private:
    char peek() const {
        if (pos_ >= s_.size()) throw FormatError("npy header: unexpected end");
        return s_[pos_];
    }
    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }
    void expect(char c) {
        skip_ws();
        if (peek() != c) throw FormatError(std::string("npy header: expected '") + c + "'");
        ++pos_;
    }
    std::string parse_string() {
        skip_ws();
        const char quote = peek();
        if (quote != '\'' && quote != '"') throw FormatError("npy header: expected string");
        const auto end = s_.find(quote, pos_ + 1);
        if (end == std::string_view::npos) throw FormatError("npy header: unterminated string");
        std::string out(s_.substr(pos_ + 1, end - pos_ - 1));
        pos_ = end + 1;
        return out;
    }
    bool parse_bool() {
        skip_ws();
        if (s_.substr(pos_, 4) == "True") {
            pos_ += 4;
            return true;
        }
        if (s_.substr(pos_, 5) == "False") {
            pos_ += 5;
            return false;
        }
        throw FormatError("npy header: expected True or False");
    }
    std::vector<std::size_t> parse_tuple() {
        expect('(');
        std::vector<std::size_t> dims;
        while (true) {
            skip_ws();
            if (peek() == ')') {
                ++pos_;
                return dims;
            }
            if (!std::isdigit(static_cast<unsigned char>(peek()))) throw FormatError("npy header: bad shape entry");
            std::size_t v = 0;
            while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
                v = v * 10 + static_cast<std::size_t>(s_[pos_] - '0');
                ++pos_;
            }
            dims.push_back(v);
            skip_ws();
            if (peek() == ',') ++pos_;
        }
    }

    std::string_view s_;
    std::size_t pos_ = 0;
};

inline std::string npy_shape_repr(const std::vector<std::size_t>& shape) {
    std::string out = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(shape[i]);
    }
    if (shape.size() == 1) out += ",";
    return out + ")";
}

// Same byte layout numpy.save produces for version 1.0.
inline std::string npy_header_bytes(const TensorFile& t) {
    std::string dict = "{'descr': '";
    dict += t.dtype == DType::float32 ? "<f4" : "|u1";
    dict += "', 'fortran_order': False, 'shape': " + npy_shape_repr(t.shape) + ", }";
    if (!t.shape.empty()) dict.append(npy_growth_digits - std::to_string(t.shape[0]).size(), ' ');

    const std::size_t prefix = npy_magic.size() + 2 + 2;
    const std::size_t hlen = dict.size() + 1;
    const std::size_t pad = npy_align - (prefix + hlen) % npy_align;
    dict.append(pad, ' ');
    dict += '\n';
    if (dict.size() > 0xFFFF) throw UnsupportedError("npy header too long for format 1.0");

    std::string out(npy_magic);
    out += '\x01';
    out += '\x00';
    out += static_cast<char>(dict.size() & 0xFF);
    out += static_cast<char>((dict.size() >> 8) & 0xFF);
    return out + dict;
}

inline std::string read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const fs::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline TensorHeader parse_npy_prefix(std::string_view bytes, const fs::path& path) {
    if (bytes.size() < 10 || bytes.substr(0, 6) != npy_magic) {
        throw FormatError("'" + path.string() + "' is not an NPY file (bad magic)");
    }
    const auto major = static_cast<unsigned char>(bytes[6]);
    const auto minor = static_cast<unsigned char>(bytes[7]);
    if (major != 1 || minor != 0) {
        throw UnsupportedError("'" + path.string() + "': NPY version " + std::to_string(major) + "." +
                               std::to_string(minor) + " (only 1.0 supported)");
    }
    const std::size_t hlen =
        static_cast<unsigned char>(bytes[8]) | (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
    if (bytes.size() < 10 + hlen) throw FormatError("'" + path.string() + "': truncated NPY header");
    TensorHeader h = NpyHeaderParser(bytes.substr(10, hlen)).parse();
    h.data_offset = 10 + hlen;
    return h;
}

} // namespace detail

/// Reads only the NPY header (dtype and shape) without loading the payload.
inline TensorHeader read_tensor_header(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::string prefix(10, '\0');
    in.read(prefix.data(), 10);
    if (in.gcount() != 10) throw FormatError("'" + path.string() + "' is not an NPY file (too short)");
    const std::size_t hlen = static_cast<unsigned char>(prefix[8]) |
                             (static_cast<std::size_t>(static_cast<unsigned char>(prefix[9])) << 8);
    std::string header(hlen, '\0');
    in.read(header.data(), static_cast<std::streamsize>(hlen));
    return detail::parse_npy_prefix(prefix + header.substr(0, static_cast<std::size_t>(in.gcount())), path);
}

inline TensorFile read_tensor(const fs::path& path) {
    const std::string bytes = detail::read_file_bytes(path);
    const TensorHeader h = detail::parse_npy_prefix(bytes, path);

    TensorFile t;
    t.dtype = h.dtype;
    t.shape = h.shape;
    const std::size_t count = shape_product(h.shape);
    const std::size_t payload = bytes.size() - h.data_offset;
    if (payload != count * item_size(h.dtype)) {
        throw FormatError("'" + path.string() + "': payload is " + std::to_string(payload) + " bytes, header implies " +
                          std::to_string(count * item_size(h.dtype)));
    }
    const char* src = bytes.data() + h.data_offset;
    if (h.dtype == DType::uint8) {
        t.data = std::vector<std::uint8_t>(src, src + count);
    } else {
        std::vector<float> values(count);
        for (std::size_t i = 0; i < count; ++i) {
            std::uint32_t bits = 0;
            for (int b = 3; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(src[4 * i + b]);
            values[i] = std::bit_cast<float>(bits);
        }
        t.data = std::move(values);
    }
    return t;
}

inline void write_tensor(const fs::path& path, const TensorFile& t) {
    t.validate();
    std::string bytes = detail::npy_header_bytes(t);
    if (t.dtype == DType::uint8) {
        const auto& v = t.u8();
        bytes.append(reinterpret_cast<const char*>(v.data()), v.size());
    } else {
        const auto& v = t.f32();
        bytes.reserve(bytes.size() + 4 * v.size());
        for (float f : v) {
            const auto bits = std::bit_cast<std::uint32_t>(f);
            for (int b = 0; b < 4; ++b) bytes += static_cast<char>((bits >> (8 * b)) & 0xFF);
        }
    }
    detail::write_file_bytes(path, bytes);
}

/// Converts a 2-D float32 tensor to a double matrix.
inline Matrix to_matrix(const TensorFile& t) {
    if (t.dtype != DType::float32 || t.shape.size() != 2) {
        throw ShapeError("expected a 2-D float32 tensor, got " + detail::npy_shape_repr(t.shape) +
                         (t.dtype == DType::float32 ? " <f4" : " |u1"));
    }
    Matrix m(static_cast<Index>(t.shape[0]), static_cast<Index>(t.shape[1]));
    const auto& v = t.f32();
    std::copy(v.begin(), v.end(), m.data());
    return m;
}

inline TensorFile from_matrix(const Matrix& m) {
    TensorFile t;
    t.dtype = DType::float32;
    t.shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
    std::vector<float> v(static_cast<std::size_t>(m.size()));
    std::transform(m.data(), m.data() + m.size(), v.begin(), [](double x) { return static_cast<float>(x); });
    t.data = std::move(v);
    return t;
}

inline TensorFile from_mask(const LabelMask& mask) {
    TensorFile t;
    t.dtype = DType::uint8;
    t.shape = {mask.rows, mask.cols};
    t.data = mask.pixels;
    return t;
}

inline LabelMask to_mask(const TensorFile& t) {
    if (t.dtype != DType::uint8 || t.shape.size() != 2) {
        throw ShapeError("expected a 2-D uint8 tensor, got " + detail::npy_shape_repr(t.shape));
    }
    LabelMask m;
    m.rows = t.shape[0];
    m.cols = t.shape[1];
    m.pixels = t.u8();
    return m;
}

// ---------------------------------------------------------------------------
// Masks

/// Writes a binary PGM (P5, maxval 255) whose gray levels are class indices.
inline void write_mask(const fs::path& path, const LabelMask& mask) {
    if (mask.pixels.size() != mask.rows * mask.cols) throw ShapeError("mask buffer does not match its dimensions");
    std::string bytes = "P5\n" + std::to_string(mask.cols) + " " + std::to_string(mask.rows) + "\n255\n";
    bytes.append(reinterpret_cast<const char*>(mask.pixels.data()), mask.pixels.size());
    detail::write_file_bytes(path, bytes);
}

inline LabelMask read_mask(const fs::path& path) {
    const std::string bytes = detail::read_file_bytes(path);
    std::size_t pos = 0;
    auto next_token = [&]() -> std::string {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        return bytes.substr(start, pos - start);
    };
    if (next_token() != "P5") throw FormatError("'" + path.string() + "' is not a binary PGM");
    LabelMask mask;
    std::size_t maxval = 0;
    try {
        mask.cols = std::stoul(next_token());
        mask.rows = std::stoul(next_token());
        maxval = std::stoul(next_token());
    } catch (const std::exception&) {
        throw FormatError("'" + path.string() + "': malformed PGM header");
    }
    if (maxval != 255) throw UnsupportedError("'" + path.string() + "': PGM maxval must be 255");
    ++pos; // single whitespace byte before the raster
    if (bytes.size() - std::min(pos, bytes.size()) != mask.rows * mask.cols) {
        throw FormatError("'" + path.string() + "': PGM raster size mismatch");
    }
    mask.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
    return mask;
}

// ---------------------------------------------------------------------------
// Manifest

struct ClassEntry {
    std::string name;
    std::vector<std::string> synonyms;
};

struct TileEntry {
    std::string id;
    fs::path features_path;
    std::optional<fs::path> priors_path;
    std::optional<fs::path> gt_path;
    std::optional<fs::path> vlm_features_path;
};

struct PatchGeometry {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t patch_px = 0;
    std::size_t tile_h = 0;
    std::size_t tile_w = 0;

    std::size_t patches_per_tile() const { return rows * cols; }
};

struct TileManifest {
    std::string scene_id;
    std::vector<ClassEntry> classes;
    std::vector<TileEntry> tiles;
    PatchGeometry geometry;
    /// Prototype rows for the built-in prior: per class, the class name first and
    /// then each synonym, in class-list order.
    std::optional<fs::path> prototypes_path;
    std::optional<int> ignore_label;
    /// Context feature dimension, filled in when features are checked.
    std::size_t feature_dim = 0;

    std::size_t num_classes() const { return classes.size(); }

    std::size_t prototype_rows() const {
        std::size_t n = 0;
        for (const auto& c : classes) n += 1 + c.synonyms.size();
        return n;
    }
};

/// Which referenced tensors load_manifest opens to check shapes.
struct ManifestChecks {
    bool features = true;
};

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& obj, const std::string& key, const std::string& path) {
    if (!obj.is_object()) throw ManifestError(path, "expected an object");
    const auto it = obj.find(key);
    if (it == obj.end()) throw ManifestError(path + "." + key, "missing required field");
    return *it;
}

inline std::size_t require_count(const nlohmann::json& obj, const std::string& key, const std::string& path) {
    const auto& v = require(obj, key, path);
    if (!v.is_number_integer() || v.get<long long>() <= 0) {
        throw ManifestError(path + "." + key, "expected a positive integer");
    }
    return v.get<std::size_t>();
}

inline std::string require_string(const nlohmann::json& obj, const std::string& key, const std::string& path) {
    const auto& v = require(obj, key, path);
    if (!v.is_string()) throw ManifestError(path + "." + key, "expected a string");
    return v.get<std::string>();
}

inline std::optional<fs::path> optional_path(const nlohmann::json& obj, const std::string& key,
                                             const std::string& path, const fs::path& base) {
    const auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw ManifestError(path + "." + key, "expected a string");
    return base / it->get<std::string>();
}

inline TensorHeader check_tensor(const fs::path& file, const std::string& field, DType dtype,
                                 std::size_t ndim) {
    if (!fs::exists(file)) throw ManifestError(field, "file not found: " + file.string());
    TensorHeader h = read_tensor_header(file);
    if (h.dtype != dtype || h.shape.size() != ndim) {
        throw ShapeError(field + ": '" + file.string() + "' must be a " + std::to_string(ndim) + "-D " +
                         (dtype == DType::float32 ? "float32" : "uint8") + " tensor");
    }
    return h;
}

inline void expect_dim(const TensorHeader& h, std::size_t axis, std::size_t want, const std::string& field,
                       const std::string& what) {
    if (h.shape[axis] != want) {
        throw ShapeError(field + ": axis " + std::to_string(axis) + " is " + std::to_string(h.shape[axis]) +
                         ", expected " + std::to_string(want) + " (" + what + ")");
    }
}

} // namespace detail

/// Parses a manifest document. Relative tensor paths resolve against base_dir.
inline TileManifest parse_manifest(const nlohmann::json& doc, const fs::path& base_dir,
                                   const ManifestChecks& checks = {}) {
    using namespace detail;
    TileManifest m;
    m.scene_id = require_string(doc, "scene_id", "$");

    const auto& classes = require(doc, "classes", "$");
    if (!classes.is_array()) throw ManifestError("$.classes", "expected an array");
    if (classes.empty()) throw ManifestError("$.classes", "class list must not be empty");
    std::set<std::string> seen;
    for (std::size_t i = 0; i < classes.size(); ++i) {
        const std::string path = "$.classes[" + std::to_string(i) + "]";
        ClassEntry c;
        c.name = require_string(classes[i], "name", path);
        if (c.name.empty()) throw ManifestError(path + ".name", "class name must not be empty");
        if (!seen.insert(c.name).second) throw ManifestError(path + ".name", "duplicate class name '" + c.name + "'");
        if (const auto it = classes[i].find("synonyms"); it != classes[i].end()) {
            if (!it->is_array()) throw ManifestError(path + ".synonyms", "expected an array of strings");
            for (std::size_t j = 0; j < it->size(); ++j) {
                if (!(*it)[j].is_string()) {
                    throw ManifestError(path + ".synonyms[" + std::to_string(j) + "]", "expected a string");
                }
                c.synonyms.push_back((*it)[j].get<std::string>());
            }
        }
        m.classes.push_back(std::move(c));
    }
    if (m.classes.size() > 256) throw ManifestError("$.classes", "at most 256 classes fit in a uint8 mask");

    const auto& grid = require(doc, "patch_grid", "$");
    m.geometry.rows = require_count(grid, "rows", "$.patch_grid");
    m.geometry.cols = require_count(grid, "cols", "$.patch_grid");
    m.geometry.patch_px = require_count(doc, "patch_px", "$");
    const auto& tile_px = require(doc, "tile_px", "$");
    m.geometry.tile_h = require_count(tile_px, "h", "$.tile_px");
    m.geometry.tile_w = require_count(tile_px, "w", "$.tile_px");
    const auto& g = m.geometry;
    if (g.rows * g.patch_px != g.tile_h || g.cols * g.patch_px != g.tile_w) {
        throw ShapeError("$.patch_grid: " + std::to_string(g.rows) + "x" + std::to_string(g.cols) + " patches of " +
                         std::to_string(g.patch_px) + " px do not tile " + std::to_string(g.tile_h) + "x" +
                         std::to_string(g.tile_w) + " px");
    }

    if (const auto it = doc.find("ignore_label"); it != doc.end() && !it->is_null()) {
        if (!it->is_number_integer() || it->get<int>() < 0 || it->get<int>() > 255) {
            throw ManifestError("$.ignore_label", "expected an integer in [0, 255]");
        }
        m.ignore_label = it->get<int>();
    }
    m.prototypes_path = optional_path(doc, "prototypes_path", "$", base_dir);

    const auto& tiles = require(doc, "tiles", "$");
    if (!tiles.is_array()) throw ManifestError("$.tiles", "expected an array");
    if (tiles.empty()) throw ManifestError("$.tiles", "tile list must not be empty");
    std::set<std::string> ids;
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        const std::string path = "$.tiles[" + std::to_string(i) + "]";
        TileEntry t;
        t.id = require_string(tiles[i], "id", path);
        if (t.id.empty() || t.id.find_first_of("/\\") != std::string::npos || t.id == "." || t.id == "..") {
            throw ManifestError(path + ".id", "tile id must be a non-empty plain file name");
        }
        if (!ids.insert(t.id).second) throw ManifestError(path + ".id", "duplicate tile id '" + t.id + "'");
        t.features_path = base_dir / require_string(tiles[i], "features_path", path);
        t.priors_path = optional_path(tiles[i], "priors_path", path, base_dir);
        t.gt_path = optional_path(tiles[i], "gt_path", path, base_dir);
        t.vlm_features_path = optional_path(tiles[i], "vlm_features_path", path, base_dir);
        m.tiles.push_back(std::move(t));
    }

    // Referenced tensors: headers only.
    const std::size_t n = g.patches_per_tile();
    const std::size_t num_classes = m.classes.size();
    std::optional<std::size_t> vlm_dim;
    if (m.prototypes_path) {
        const auto h = check_tensor(*m.prototypes_path, "$.prototypes_path", DType::float32, 2);
        expect_dim(h, 0, m.prototype_rows(), "$.prototypes_path", "one row per class name and synonym");
        vlm_dim = h.shape[1];
    }
    for (std::size_t i = 0; i < m.tiles.size(); ++i) {
        const auto& t = m.tiles[i];
        const std::string path = "$.tiles[" + std::to_string(i) + "]";
        if (checks.features) {
            const auto h = check_tensor(t.features_path, path + ".features_path", DType::float32, 2);
            expect_dim(h, 0, n, path + ".features_path", "patches per tile");
            if (m.feature_dim == 0) m.feature_dim = h.shape[1];
            expect_dim(h, 1, m.feature_dim, path + ".features_path", "feature dimension of the first tile");
        }
        if (t.priors_path) {
            const auto h = check_tensor(*t.priors_path, path + ".priors_path", DType::float32, 2);
            expect_dim(h, 0, n, path + ".priors_path", "patches per tile");
            expect_dim(h, 1, num_classes, path + ".priors_path", "number of classes");
        }
        if (t.vlm_features_path) {
            const auto h = check_tensor(*t.vlm_features_path, path + ".vlm_features_path", DType::float32, 2);
            expect_dim(h, 0, n, path + ".vlm_features_path", "patches per tile");
            if (vlm_dim) expect_dim(h, 1, *vlm_dim, path + ".vlm_features_path", "prototype dimension");
        }
        if (t.gt_path) {
            const auto h = check_tensor(*t.gt_path, path + ".gt_path", DType::uint8, 2);
            expect_dim(h, 0, g.tile_h, path + ".gt_path", "tile height");
            expect_dim(h, 1, g.tile_w, path + ".gt_path", "tile width");
        }
    }
    return m;
}

inline TileManifest load_manifest(const fs::path& path, const ManifestChecks& checks = {}) {
    const std::string text = detail::read_file_bytes(path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ManifestError("$", std::string("invalid JSON: ") + e.what());
    }
    return parse_manifest(doc, path.parent_path(), checks);
}

/// Serializes a manifest; tensor paths are written relative to base_dir.
inline nlohmann::json manifest_to_json(const TileManifest& m, const fs::path& base_dir) {
    auto rel = [&](const fs::path& p) { return p.lexically_relative(base_dir).generic_string(); };
    nlohmann::json doc;
    doc["scene_id"] = m.scene_id;
    doc["classes"] = nlohmann::json::array();
    for (const auto& c : m.classes) doc["classes"].push_back({{"name", c.name}, {"synonyms", c.synonyms}});
    doc["patch_grid"] = {{"rows", m.geometry.rows}, {"cols", m.geometry.cols}};
    doc["patch_px"] = m.geometry.patch_px;
    doc["tile_px"] = {{"h", m.geometry.tile_h}, {"w", m.geometry.tile_w}};
    if (m.ignore_label) doc["ignore_label"] = *m.ignore_label;
    if (m.prototypes_path) doc["prototypes_path"] = rel(*m.prototypes_path);
    doc["tiles"] = nlohmann::json::array();
    for (const auto& t : m.tiles) {
        nlohmann::json e = {{"id", t.id}, {"features_path", rel(t.features_path)}};
        if (t.priors_path) e["priors_path"] = rel(*t.priors_path);
        if (t.gt_path) e["gt_path"] = rel(*t.gt_path);
        if (t.vlm_features_path) e["vlm_features_path"] = rel(*t.vlm_features_path);
        doc["tiles"].push_back(std::move(e));
    }
    return doc;
}

} // namespace coninfer
