#include <fstream>
#include <iterator>

#include <gtest/gtest.h>

#include "coninfer/tensorio.hpp"
#include "test_util.hpp"

using namespace coninfer;
using coninfer::testutil::TempDir;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Header for a 1-D float tensor, built by hand the way numpy lays it out.
std::string npy_with_dict(const std::string& dict) {
    std::string h = dict;
    const std::size_t pad = 64 - (10 + h.size() + 1) % 64;
    h.append(pad, ' ');
    h += '\n';
    std::string out("\x93NUMPY\x01\x00", 8);
    out += static_cast<char>(h.size() & 0xFF);
    out += static_cast<char>(h.size() >> 8);
    return out + h;
}

TileManifest write_scene(const TempDir& dir, std::size_t grid, std::size_t patch_px, std::size_t tile_px,
                         nlohmann::json* doc_out = nullptr) {
    const std::size_t n = grid * grid;
    write_tensor(dir / "f.npy", TensorFile{DType::float32, {n, 3}, std::vector<float>(n * 3, 0.5f)});
    std::vector<float> pri(n * 2, 0.5f);
    write_tensor(dir / "p.npy", TensorFile{DType::float32, {n, 2}, pri});
    nlohmann::json doc = {
        {"scene_id", "s"},
        {"classes", {{{"name", "road"}, {"synonyms", {"street"}}}, {{"name", "tree"}}}},
        {"patch_grid", {{"rows", grid}, {"cols", grid}}},
        {"patch_px", patch_px},
        {"tile_px", {{"h", tile_px}, {"w", tile_px}}},
        {"tiles", {{{"id", "t0"}, {"features_path", "f.npy"}, {"priors_path", "p.npy"}}}},
    };
    if (doc_out) *doc_out = doc;
    return parse_manifest(doc, dir.path());
}

} // namespace

TEST(Npy, ParsesFloatTensor) {
    TempDir dir;
    std::string bytes = npy_with_dict("{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3), }");
    for (int i = 0; i < 6; ++i) {
        const float f = static_cast<float>(i) * 0.5f;
        bytes.append(reinterpret_cast<const char*>(&f), 4);
    }
    spit(dir / "a.npy", bytes);
    const TensorFile t = read_tensor(dir / "a.npy");
    EXPECT_EQ(t.dtype, DType::float32);
    EXPECT_EQ(t.shape, (std::vector<std::size_t>{2, 3}));
    EXPECT_EQ(t.f32(), (std::vector<float>{0.0f, 0.5f, 1.0f, 1.5f, 2.0f, 2.5f}));
}

TEST(Npy, RejectsFortranOrder) {
    TempDir dir;
    std::string bytes = npy_with_dict("{'descr': '<f4', 'fortran_order': True, 'shape': (1,), }");
    bytes.append(4, '\0');
    spit(dir / "f.npy", bytes);
    EXPECT_THROW(read_tensor(dir / "f.npy"), UnsupportedError);
}

TEST(Npy, RejectsOtherDtypesAndBadMagic) {
    TempDir dir;
    std::string be = npy_with_dict("{'descr': '>f4', 'fortran_order': False, 'shape': (1,), }");
    be.append(4, '\0');
    spit(dir / "be.npy", be);
    EXPECT_THROW(read_tensor(dir / "be.npy"), UnsupportedError);

    std::string f8 = npy_with_dict("{'descr': '<f8', 'fortran_order': False, 'shape': (1,), }");
    f8.append(8, '\0');
    spit(dir / "f8.npy", f8);
    EXPECT_THROW(read_tensor(dir / "f8.npy"), UnsupportedError);

    spit(dir / "junk.npy", "not a numpy file at all");
    EXPECT_THROW(read_tensor(dir / "junk.npy"), FormatError);

    std::string short_payload = npy_with_dict("{'descr': '<f4', 'fortran_order': False, 'shape': (2,), }");
    short_payload.append(4, '\0');
    spit(dir / "short.npy", short_payload);
    EXPECT_THROW(read_tensor(dir / "short.npy"), FormatError);

    EXPECT_THROW(read_tensor(dir / "missing.npy"), IoError);
}

TEST(Npy, MinimalTensorLayoutMatchesNumpy) {
    TempDir dir;
    write_tensor(dir / "z.npy", TensorFile{DType::float32, {1}, std::vector<float>{0.0f}});
    const std::string bytes = slurp(dir / "z.npy");
    ASSERT_EQ(bytes.size(), 128u + 4u);
    EXPECT_EQ(bytes.substr(0, 8), std::string("\x93NUMPY\x01\x00", 8));
    EXPECT_EQ(bytes[127], '\n');
    // numpy.save(np.zeros(1, np.float32)) header text, growth padding included.
    const std::string dict = "{'descr': '<f4', 'fortran_order': False, 'shape': (1,), }";
    EXPECT_EQ(bytes.substr(10, dict.size()), dict);
}

TEST(Npy, Uint8RoundTrip) {
    TempDir dir;
    const TensorFile t{DType::uint8, {2, 2}, std::vector<std::uint8_t>{0, 1, 2, 3}};
    write_tensor(dir / "u.npy", t);
    EXPECT_EQ(read_tensor(dir / "u.npy"), t);
    EXPECT_EQ(slurp(dir / "u.npy").size(), 128u + 4u);
}

TEST(Npy, InconsistentShapeIsRejected) {
    TempDir dir;
    const TensorFile bad{DType::float32, {2, 3}, std::vector<float>(5, 1.0f)};
    EXPECT_THROW(write_tensor(dir / "bad.npy", bad), ShapeError);
    EXPECT_FALSE(fs::exists(dir / "bad.npy"));
}

// Property: write(read(f)) reproduces f byte for byte, for random shapes and
// bit patterns (NaN payloads and signed zeros included).
TEST(Npy, ReadWriteIsBitwiseIdentity) {
    TempDir dir;
    synth::SplitMix64 rng(7);
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<std::size_t> shape(rng.below(4));
        for (auto& s : shape) s = rng.below(6);
        const std::size_t n = shape_product(shape);
        TensorFile t;
        t.shape = shape;
        if (trial % 2 == 0) {
            std::vector<float> v(n);
            for (auto& f : v) f = std::bit_cast<float>(static_cast<std::uint32_t>(rng.next()));
            t.dtype = DType::float32;
            t.data = v;
        } else {
            std::vector<std::uint8_t> v(n);
            for (auto& b : v) b = static_cast<std::uint8_t>(rng.next());
            t.dtype = DType::uint8;
            t.data = v;
        }
        const auto a = dir / "a.npy";
        const auto b = dir / "b.npy";
        write_tensor(a, t);
        write_tensor(b, read_tensor(a));
        ASSERT_EQ(slurp(a), slurp(b)) << "trial " << trial;
        ASSERT_EQ(slurp(a).size() % 64, (n * item_size(t.dtype)) % 64);
        const auto h = read_tensor_header(a);
        EXPECT_EQ(h.shape, shape);
        EXPECT_EQ(h.data_offset % 64, 0u);
    }
}

TEST(Mask, PgmEncoding) {
    TempDir dir;
    LabelMask m(2, 2);
    m.pixels = {0, 1, 1, 0};
    write_mask(dir / "m.pgm", m);
    EXPECT_EQ(slurp(dir / "m.pgm"), std::string("P5\n2 2\n255\n\x00\x01\x01\x00", 15));
    EXPECT_EQ(read_mask(dir / "m.pgm"), m);
}

TEST(Mask, FullTileSize) {
    TempDir dir;
    const LabelMask m(448, 448);
    write_mask(dir / "z.pgm", m);
    const std::string header = "P5\n448 448\n255\n";
    const std::string bytes = slurp(dir / "z.pgm");
    EXPECT_EQ(bytes.size(), header.size() + 200704u);
    EXPECT_EQ(bytes.substr(0, header.size()), header);
    EXPECT_EQ(read_mask(dir / "z.pgm"), m);
}

TEST(Mask, NonSquareRoundTrip) {
    TempDir dir;
    LabelMask m(3, 5);
    for (std::size_t i = 0; i < m.pixels.size(); ++i) m.pixels[i] = static_cast<std::uint8_t>(i * 17);
    write_mask(dir / "r.pgm", m);
    const LabelMask back = read_mask(dir / "r.pgm");
    EXPECT_EQ(back.rows, 3u);
    EXPECT_EQ(back.cols, 5u);
    EXPECT_EQ(back, m);
}

TEST(Manifest, StandardTileGeometryIsValid) {
    TempDir dir;
    const TileManifest m = write_scene(dir, 28, 16, 448);
    EXPECT_EQ(m.geometry.patches_per_tile(), 784u);
    EXPECT_EQ(m.num_classes(), 2u);
    EXPECT_EQ(m.feature_dim, 3u);
    EXPECT_EQ(m.prototype_rows(), 3u);
    ASSERT_TRUE(m.tiles[0].priors_path);
    EXPECT_EQ(*m.tiles[0].priors_path, dir / "p.npy");
}

TEST(Manifest, GeometryMismatchIsShapeError) {
    TempDir dir;
    EXPECT_THROW(write_scene(dir, 2, 16, 448), ShapeError);
}

TEST(Manifest, SchemaViolationsNameTheField) {
    TempDir dir;
    nlohmann::json doc;
    write_scene(dir, 2, 4, 8, &doc);

    auto field_of = [&](nlohmann::json d) -> std::string {
        try {
            parse_manifest(d, dir.path());
        } catch (const ManifestError& e) {
            return e.field();
        }
        return "<no error>";
    };

    auto empty = doc;
    empty["classes"] = nlohmann::json::array();
    EXPECT_EQ(field_of(empty), "$.classes");

    auto dup = doc;
    dup["classes"][1]["name"] = "road";
    EXPECT_EQ(field_of(dup), "$.classes[1].name");

    auto no_grid = doc;
    no_grid.erase("patch_grid");
    EXPECT_EQ(field_of(no_grid), "$.patch_grid");

    auto bad_rows = doc;
    bad_rows["patch_grid"]["rows"] = -2;
    EXPECT_EQ(field_of(bad_rows), "$.patch_grid.rows");

    auto missing_file = doc;
    missing_file["tiles"][0]["features_path"] = "nope.npy";
    EXPECT_EQ(field_of(missing_file), "$.tiles[0].features_path");

    auto bad_syn = doc;
    bad_syn["classes"][0]["synonyms"] = {1, 2};
    EXPECT_EQ(field_of(bad_syn), "$.classes[0].synonyms[0]");
}

TEST(Manifest, ReferencedTensorShapesAreChecked) {
    TempDir dir;
    nlohmann::json doc;
    write_scene(dir, 2, 4, 8, &doc);
    // Prior tensor with three classes against a two-class vocabulary.
    write_tensor(dir / "p3.npy", TensorFile{DType::float32, {4, 3}, std::vector<float>(12, 1.0f / 3)});
    doc["tiles"][0]["priors_path"] = "p3.npy";
    EXPECT_THROW(parse_manifest(doc, dir.path()), ShapeError);

    // Ground truth must be tile-sized uint8.
    doc["tiles"][0]["priors_path"] = "p.npy";
    write_tensor(dir / "gt.npy", TensorFile{DType::uint8, {4, 4}, std::vector<std::uint8_t>(16, 0)});
    doc["tiles"][0]["gt_path"] = "gt.npy";
    EXPECT_THROW(parse_manifest(doc, dir.path()), ShapeError);
    write_tensor(dir / "gt.npy", TensorFile{DType::uint8, {8, 8}, std::vector<std::uint8_t>(64, 0)});
    EXPECT_NO_THROW(parse_manifest(doc, dir.path()));
}

TEST(Manifest, FeatureChecksCanBeSkipped) {
    TempDir dir;
    nlohmann::json doc;
    write_scene(dir, 2, 4, 8, &doc);
    doc["tiles"][0]["features_path"] = "absent.npy";
    EXPECT_THROW(parse_manifest(doc, dir.path()), ManifestError);
    EXPECT_NO_THROW(parse_manifest(doc, dir.path(), {.features = false}));
}

TEST(Manifest, LoadFromFileAndInvalidJson) {
    TempDir dir;
    nlohmann::json doc;
    write_scene(dir, 2, 4, 8, &doc);
    spit(dir / "m.json", doc.dump());
    EXPECT_EQ(load_manifest(dir / "m.json").tiles.size(), 1u);
    spit(dir / "bad.json", "{ not json");
    EXPECT_THROW(load_manifest(dir / "bad.json"), ManifestError);

    // Serializing and re-parsing preserves the manifest.
    const TileManifest m = load_manifest(dir / "m.json");
    const TileManifest again = parse_manifest(manifest_to_json(m, dir.path()), dir.path());
    EXPECT_EQ(again.tiles[0].features_path, m.tiles[0].features_path);
    EXPECT_EQ(again.classes[0].synonyms, m.classes[0].synonyms);
}
