#include "rar/features.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

namespace rar {
namespace {

using test::catalog;

Observation bottleneck_view(const SceneItem& item, const Vec3& shift = Vec3::Zero()) {
  const PlanarPose4 placement(0.0, 0.0, 0.0, 0.0);
  Pose b = bottleneck_world(item, placement);
  b.position += shift;
  return render(make_world(item, placement, b, 3));
}

TEST(Extract, UnitNormAndDeterministic) {
  const Observation o = bottleneck_view(catalog().find("mug_blue"));
  for (const std::string& id : builtin_extractors()) {
    const auto x = make_extractor(id);
    const Embedding e = x->extract(o);
    ASSERT_EQ(e.dim(), x->dim()) << id;
    double n = 0.0;
    for (float v : e.values) n += static_cast<double>(v) * v;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6) << id;
    EXPECT_EQ(e, x->extract(o)) << id;
    EXPECT_EQ(e.extractor_id, id);
  }
}

TEST(Extract, RejectsMalformedObservation) {
  Observation o;
  o.rgb.assign(10, 0);
  for (const std::string& id : builtin_extractors()) EXPECT_THROW(make_extractor(id)->extract(o), Error) << id;
  EXPECT_THROW(make_extractor("resnet50"), Error);
}

TEST(Extract, PatchOnePixelShiftBeatsOtherClasses) {
  // Exhaustive over the library: a 1 px shift of an object stays closer to
  // the original than any object of another class does.
  const auto x = make_extractor("patch");
  const double metres_per_px = catalog().bottleneck_height / focal_length_px(60.0);
  std::vector<Embedding> base;
  for (const SceneItem& it : catalog().items) base.push_back(x->extract(bottleneck_view(it)));
  for (std::size_t a = 0; a < catalog().items.size(); ++a) {
    const SceneItem& item = catalog().items[a];
    const double shifted = similarity(base[a], x->extract(bottleneck_view(item, Vec3(metres_per_px, 0, 0))));
    double best_other = -1.0;
    std::string nearest;
    for (std::size_t b = 0; b < catalog().items.size(); ++b) {
      if (catalog().items[b].class_id == item.class_id) continue;
      const double s = similarity(base[a], base[b]);
      if (s > best_other) {
        best_other = s;
        nearest = catalog().items[b].name;
      }
    }
    EXPECT_GT(shifted, best_other) << item.name << " vs " << nearest;
  }
}

TEST(Similarity, SelfAndNegation) {
  const Embedding e = make_extractor("random_projection")->extract(bottleneck_view(catalog().find("can_red")));
  EXPECT_DOUBLE_EQ(similarity(e, e), 1.0);
  Embedding neg = e;
  for (float& v : neg.values) v = -v;
  EXPECT_DOUBLE_EQ(similarity(e, neg), -1.0);
}

TEST(Similarity, MatchesDotOverNorms) {
  Rng rng(9);
  for (int t = 0; t < 20; ++t) {
    Embedding a{"external:test", {}}, b{"external:test", {}};
    for (int i = 0; i < 64; ++i) {
      a.values.push_back(static_cast<float>(rng.normal()));
      b.values.push_back(static_cast<float>(rng.normal()));
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int i = 0; i < 64; ++i) {
      dot += static_cast<double>(a.values[i]) * b.values[i];
      na += static_cast<double>(a.values[i]) * a.values[i];
      nb += static_cast<double>(b.values[i]) * b.values[i];
    }
    EXPECT_NEAR(similarity(a, b), dot / std::sqrt(na * nb), 1e-12);
  }
}

TEST(Similarity, RejectsMismatches) {
  const Embedding a{"patch", {1.0f, 0.0f}};
  EXPECT_THROW(similarity(a, Embedding{"random_projection", {1.0f, 0.0f}}), Error);
  EXPECT_THROW(similarity(a, Embedding{"patch", {1.0f, 0.0f, 0.0f}}), Error);
  EXPECT_THROW(similarity(a, Embedding{"patch", {0.0f, 0.0f}}), Error);
}

TEST(ImportEmbeddings, ThreeVectorsAreUnitNorm) {
  test::TempDir dir;
  Rng rng(10);
  EmbeddingTable table;
  for (int k = 0; k < 3; ++k) {
    std::vector<double> v(384);
    for (double& x : v) x = rng.normal() * 3.0;
    table.emplace_back("obs" + std::to_string(k), Embedding{"dino", std::vector<float>(v.begin(), v.end())});
  }
  export_embeddings(dir / "e.bin", "dino", table);
  const EmbeddingTable got = import_embeddings(dir / "e.bin");
  ASSERT_EQ(got.size(), 3u);
  for (const auto& [key, e] : got) {
    EXPECT_EQ(e.extractor_id, "external:dino");
    EXPECT_EQ(e.dim(), 384u);
    double n = 0.0;
    for (float v : e.values) n += static_cast<double>(v) * v;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6) << key;
  }
}

TEST(ImportEmbeddings, RejectsZeroVector) {
  test::TempDir dir;
  export_embeddings(dir / "z.bin", "dino", {{"zero", Embedding{"dino", std::vector<float>(16, 0.0f)}}});
  EXPECT_THROW(import_embeddings(dir / "z.bin"), Error);
}

TEST(ImportEmbeddings, RoundTripIsBitEqual) {
  test::TempDir dir;
  const Observation o = bottleneck_view(catalog().find("teapot"));
  EmbeddingTable table;
  for (const std::string& id : builtin_extractors()) table.emplace_back(id, make_extractor(id)->extract(o));
  // All rows of one file share an extractor id, so export them one by one.
  for (const auto& [key, e] : table) {
    export_embeddings(dir / (key + ".bin"), key, {{key, e}});
    const EmbeddingTable back = import_embeddings(dir / (key + ".bin"));
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0].first, key);
    EXPECT_EQ(back[0].second.values, e.values) << key;
  }
}

}  // namespace
}  // namespace rar
