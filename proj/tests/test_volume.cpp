#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "support/oracles.hpp"

using namespace vtrace;

namespace {

Volume3D random_volume(const Grid& g, VolumeKind kind, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Volume3D v(g, kind);
  for (std::size_t n = 0; n < v.size(); ++n) v[n] = kind == VolumeKind::binary ? (u(rng) > 0.5f) : u(rng);
  return v;
}

std::string error_message(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Grid, WorldIndexRoundTrip) {
  const Grid g{{5, 6, 7}, {0.5, 1.25, 2.0}, {-3.0, 4.0, 10.0}};
  for (int k = 0; k < 7; ++k)
    for (int j = 0; j < 6; ++j)
      for (int i = 0; i < 5; ++i) {
        EXPECT_EQ(g.nearest_index(g.world(i, j, k)), (Index3{i, j, k}));
        EXPECT_EQ(g.unravel(g.index(i, j, k)), (Index3{i, j, k}));
      }
}

TEST(Volume, KindInvariants) {
  const Grid g{{2, 2, 2}, {1, 1, 1}, {}};
  Volume3D p(g, VolumeKind::probability, 0.5f);
  EXPECT_NO_THROW(p.validate());
  p[3] = 1.5f;
  EXPECT_THROW(p.validate(), Error);
  Volume3D b(g, VolumeKind::binary);
  b[0] = 0.5f;
  EXPECT_THROW(b.validate(), Error);
  EXPECT_THROW(Volume3D(g, VolumeKind::intensity, std::vector<float>(7)), Error);
  EXPECT_THROW(Volume3D(Grid{{2, 2, 2}, {1, 0, 1}, {}}, VolumeKind::intensity), Error);
}

TEST(RvolIo, LoadsHandWrittenHeader) {
  const auto dir = oracle::temp_dir("rvol_hand");
  std::vector<float> values(64);
  for (int n = 0; n < 64; ++n) values[static_cast<std::size_t>(n)] = static_cast<float>(n) * 0.25f;
  {
    std::ofstream raw(dir / "v.raw", std::ios::binary);
    raw.write(reinterpret_cast<const char*>(values.data()), 64 * 4);
    std::ofstream h(dir / "v.rvol.json");
    h << R"({"dims":[4,4,4],"spacing":[1,1,1],"origin":[0,0,0],"dtype":"f32","order":"x-fastest","data":"v.raw"})";
  }
  const Volume3D v = load_volume(dir / "v.rvol.json");
  EXPECT_EQ(v.size(), 64u);
  EXPECT_EQ(v(1, 0, 0), 0.25f);
  EXPECT_EQ(v(0, 1, 0), 1.0f);
  EXPECT_EQ(v(0, 0, 1), 4.0f);
}

TEST(RvolIo, ShortPayloadIsSizeMismatch) {
  const auto dir = oracle::temp_dir("rvol_short");
  {
    std::vector<float> values(63, 1.0f);
    std::ofstream raw(dir / "v.raw", std::ios::binary);
    raw.write(reinterpret_cast<const char*>(values.data()), 63 * 4);
    std::ofstream h(dir / "v.rvol.json");
    h << R"({"dims":[4,4,4],"spacing":[1,1,1],"origin":[0,0,0],"dtype":"f32","order":"x-fastest","data":"v.raw"})";
  }
  EXPECT_NE(error_message([&] { load_volume(dir / "v.rvol.json"); }).find("size mismatch"), std::string::npos);
}

TEST(RvolIo, MissingFileAndBadSpacing) {
  const auto dir = oracle::temp_dir("rvol_bad");
  EXPECT_THROW(load_volume(dir / "none.rvol.json"), Error);
  {
    std::ofstream raw(dir / "v.raw", std::ios::binary);
    raw.write("\0", 1);
    std::ofstream h(dir / "v.rvol.json");
    h << R"({"dims":[1,1,1],"spacing":[1,0,1],"origin":[0,0,0],"dtype":"u8","order":"x-fastest","data":"v.raw"})";
  }
  EXPECT_THROW(load_volume(dir / "v.rvol.json"), Error);
}

TEST(RvolIo, RoundTripIsBitIdentical) {
  const auto dir = oracle::temp_dir("rvol_rt");
  const Grid g8{{8, 8, 8}, {0.7, 0.8, 1.9}, {1.5, -2.0, 3.25}};
  const Volume3D a = random_volume(g8, VolumeKind::intensity, 1);
  save_volume(a, dir / "a.rvol.json");
  EXPECT_EQ(load_volume(dir / "a.rvol.json"), a);

  const Volume3D p = random_volume(Grid{{16, 16, 16}, {1, 1, 1}, {}}, VolumeKind::probability, 2);
  save_volume(p, dir / "p.rvol.json");
  EXPECT_EQ(load_volume(dir / "p.rvol.json"), p);

  const Volume3D one(Grid{{1, 1, 1}, {1, 1, 1}, {}}, VolumeKind::probability, 0.5f);
  save_volume(one, dir / "one.rvol.json");
  EXPECT_TRUE(std::filesystem::exists(dir / "one.raw"));
  EXPECT_EQ(load_volume(dir / "one.rvol.json"), one);
}

TEST(RvolIo, BinaryPayloadHoldsOnlyZeroOne) {
  const auto dir = oracle::temp_dir("rvol_bin");
  const Volume3D b = random_volume(Grid{{6, 5, 4}, {1, 1, 1}, {}}, VolumeKind::binary, 3);
  save_volume(b, dir / "b.rvol.json");
  std::ifstream raw(dir / "b.raw", std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(raw)), std::istreambuf_iterator<char>());
  ASSERT_EQ(bytes.size(), b.size());
  for (char c : bytes) EXPECT_TRUE(c == 0 || c == 1);
  EXPECT_EQ(load_volume(dir / "b.rvol.json"), b);
}

TEST(Subvolume, ConstantVolumeStaysConstant) {
  const Volume3D v(Grid{{20, 20, 20}, {1, 1, 1}, {}}, VolumeKind::intensity, 7.0f);
  for (auto mode : {Interpolation::tricubic, Interpolation::trilinear}) {
    const Volume3D s = extract_subvolume(v, SubvolumeSpec{{9.3, 10.1, 8.7}, 6.0, 12}, mode);
    for (float x : s.data()) EXPECT_NEAR(x, 7.0f, 1e-5f);
  }
  const Volume3D m(Grid{{20, 20, 20}, {1, 1, 1}, {}}, VolumeKind::binary, 1.0f);
  const Volume3D s = extract_subvolume(m, SubvolumeSpec{{9.3, 10.1, 8.7}, 6.0, 12}, Interpolation::labels);
  for (float x : s.data()) EXPECT_EQ(x, 1.0f);
}

TEST(Subvolume, GeometryOfTheSampledCube) {
  const Volume3D v(Grid{{32, 32, 32}, {1, 1, 1}, {}}, VolumeKind::intensity, 1.0f);
  const SubvolumeSpec spec{{10.0, 12.0, 14.0}, 8.0, 16};
  const Volume3D s = extract_subvolume(v, spec, Interpolation::tricubic);
  EXPECT_EQ(s.dims(), (Index3{16, 16, 16}));
  EXPECT_DOUBLE_EQ(s.spacing().x, 0.5);
  EXPECT_NEAR(s.origin().x, 10.0 - 4.0 + 0.25, 1e-12);
  EXPECT_NEAR(s.origin().z, 14.0 - 4.0 + 0.25, 1e-12);
}

TEST(Subvolume, LatticeAlignedSpecEqualsCrop) {
  const Volume3D v = random_volume(Grid{{24, 24, 24}, {1, 1, 1}, {}}, VolumeKind::intensity, 4);
  // 10 voxels of 1 mm whose centres are the source voxels 5..14.
  const SubvolumeSpec spec{{9.5, 9.5, 9.5}, 10.0, 10};
  const Volume3D expected = crop(v, {5, 5, 5}, {15, 15, 15});
  for (auto mode : {Interpolation::tricubic, Interpolation::trilinear}) {
    const Volume3D s = extract_subvolume(v, spec, mode);
    ASSERT_EQ(s.grid(), expected.grid());
    for (std::size_t n = 0; n < s.size(); ++n) EXPECT_EQ(s[n], expected[n]);
  }
}

TEST(Subvolume, IdentitySpecReproducesInput) {
  const Volume3D v = random_volume(Grid{{16, 16, 16}, {1, 1, 1}, {}}, VolumeKind::intensity, 5);
  const SubvolumeSpec spec{{7.5, 7.5, 7.5}, 16.0, 16};
  for (auto mode : {Interpolation::tricubic, Interpolation::trilinear}) {
    const Volume3D s = extract_subvolume(v, spec, mode);
    for (std::size_t n = 0; n < s.size(); ++n) EXPECT_EQ(s[n], v[n]);
  }
  const Volume3D m = binarize(v);
  const Volume3D sm = extract_subvolume(m, spec, Interpolation::labels);
  for (std::size_t n = 0; n < sm.size(); ++n) EXPECT_EQ(sm[n], m[n]);
}

TEST(Subvolume, LabelsModeKeepsSphereVolume) {
  const Grid g{{40, 40, 40}, {1, 1, 1}, {}};
  const Volume3D sphere = oracle::sphere_mask(g, {19.5, 19.5, 19.5}, 10.0);
  // Double resolution over the whole sphere: 48 voxels of 0.5 mm.
  const Volume3D s = extract_subvolume(sphere, SubvolumeSpec{{19.5, 19.5, 19.5}, 24.0, 48}, Interpolation::labels);
  const double mm3 = static_cast<double>(s.count_nonzero()) * s.grid().voxel_volume();
  const double analytic = 4.0 / 3.0 * std::numbers::pi * 1000.0;
  EXPECT_NEAR(mm3 / analytic, 1.0, 0.05);
}

TEST(Subvolume, OutsideIsEmptyCropAndPadsWithMinimum) {
  Volume3D v(Grid{{10, 10, 10}, {1, 1, 1}, {}}, VolumeKind::intensity, 5.0f);
  v(0, 0, 0) = -3.0f;
  EXPECT_NE(error_message([&] { extract_subvolume(v, SubvolumeSpec{{50, 50, 50}, 4.0, 8}, Interpolation::trilinear); })
                .find("empty crop"),
            std::string::npos);
  const Volume3D s = extract_subvolume(v, SubvolumeSpec{{9.5, 5, 5}, 8.0, 8}, Interpolation::trilinear);
  EXPECT_EQ(s(7, 4, 4), -3.0f);
}

TEST(Normalize, ZScoreTwoValues) {
  Volume3D v(Grid{{2, 1, 1}, {1, 1, 1}, {}}, VolumeKind::intensity);
  v[0] = 0.0f;
  v[1] = 2.0f;
  const auto r = normalize_zscore(v);
  EXPECT_FLOAT_EQ(r.volume[0], -1.0f);
  EXPECT_FLOAT_EQ(r.volume[1], 1.0f);
  EXPECT_DOUBLE_EQ(r.mu, 1.0);
  EXPECT_DOUBLE_EQ(r.sigma, 1.0);
}

TEST(Normalize, ZScoreMomentsAndIdempotence) {
  const Volume3D v = random_volume(Grid{{10, 10, 10}, {1, 1, 1}, {}}, VolumeKind::intensity, 6);
  const Volume3D z = normalize_zscore(v).volume;
  double m = 0, ss = 0;
  for (float x : z.data()) m += x;
  m /= static_cast<double>(z.size());
  for (float x : z.data()) ss += (x - m) * (x - m);
  EXPECT_LT(std::abs(m), 1e-5);
  EXPECT_LT(std::abs(std::sqrt(ss / static_cast<double>(z.size())) - 1.0), 1e-5);
  const Volume3D zz = normalize_zscore(z).volume;
  for (std::size_t n = 0; n < z.size(); ++n) EXPECT_NEAR(zz[n], z[n], 1e-5);
}

TEST(Normalize, ConstantImageRejected) {
  const Volume3D v(Grid{{3, 3, 3}, {1, 1, 1}, {}}, VolumeKind::intensity, 2.0f);
  EXPECT_NE(error_message([&] { normalize_zscore(v); }).find("constant image"), std::string::npos);
}

TEST(Normalize, CtForegroundFormula) {
  Volume3D v(Grid{{3, 1, 1}, {1, 1, 1}, {}}, VolumeKind::intensity);
  v[0] = 700.0f;
  v[1] = 200.0f;
  v[2] = -1000.0f;
  const ForegroundStats s{-100, 500, 200, 100};
  const Volume3D out = normalize_ct_foreground(v, s);
  EXPECT_FLOAT_EQ(out[0], 3.0f);
  EXPECT_FLOAT_EQ(out[1], 0.0f);
  EXPECT_FLOAT_EQ(out[2], -3.0f);
  EXPECT_THROW(normalize_ct_foreground(v, ForegroundStats{0, 1, 0, 0}), Error);
}

TEST(ForegroundStats, ValuesOneToHundred) {
  Volume3D img(Grid{{10, 10, 2}, {1, 1, 1}, {}}, VolumeKind::intensity, -50.0f);
  Volume3D mask(img.grid(), VolumeKind::binary);
  for (int n = 0; n < 100; ++n) {
    img[static_cast<std::size_t>(n)] = static_cast<float>(n + 1);
    mask[static_cast<std::size_t>(n)] = 1.0f;
  }
  const std::vector<Volume3D> imgs{img}, masks{mask};
  const auto s = compute_foreground_stats(imgs, masks);
  EXPECT_NEAR(s.p0_5, 1.0 + 0.005 * 99, 1e-9);
  EXPECT_NEAR(s.p99_5, 1.0 + 0.995 * 99, 1e-9);
  EXPECT_DOUBLE_EQ(s.mu, 50.5);
  EXPECT_NEAR(s.p0_5, 1.0, 0.5);
  EXPECT_NEAR(s.p99_5, 100.0, 0.5);
  const std::vector<Volume3D> empty{Volume3D(img.grid(), VolumeKind::binary)};
  EXPECT_THROW(compute_foreground_stats(imgs, empty), Error);
}

TEST(ForegroundStats, UnionOfTwoImagesMatchesSortOracle) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> lo(0, 10), hi(100, 200);
  std::vector<Volume3D> imgs, masks;
  std::vector<double> all;
  for (int c = 0; c < 2; ++c) {
    Volume3D img(Grid{{6, 6, 6}, {1, 1, 1}, {}}, VolumeKind::intensity);
    Volume3D m = oracle::random_mask(img.grid(), rng, 0.4);
    for (std::size_t n = 0; n < img.size(); ++n) {
      img[n] = static_cast<float>(c == 0 ? lo(rng) : hi(rng));
      if (m[n] != 0.0f) all.push_back(img[n]);
    }
    imgs.push_back(img);
    masks.push_back(m);
  }
  std::sort(all.begin(), all.end());
  const double pos = 0.995 * static_cast<double>(all.size() - 1);
  const auto i = static_cast<std::size_t>(pos);
  const double p995 = all[i] + (pos - static_cast<double>(i)) * (all[std::min(i + 1, all.size() - 1)] - all[i]);
  double mu = 0;
  for (double x : all) mu += x;
  mu /= static_cast<double>(all.size());
  const auto s = compute_foreground_stats(imgs, masks);
  EXPECT_NEAR(s.p99_5, p995, 1e-9);
  EXPECT_NEAR(s.mu, mu, 1e-9);
}

TEST(Normalize, CtOnPhantomForeground) {
  PhantomConfig pc;
  pc.depth = 0;
  const Grid g{{32, 32, 48}, {1, 1, 1}, {}};
  const auto tree = generate_tree(pc, voxel_center_box(g));
  const auto im = rasterize_phantom(tree, g, pc);
  const std::vector<Volume3D> imgs{im.image}, masks{im.mask};
  const auto s = compute_foreground_stats(imgs, masks);
  // Stats without clipping, so the masked moments come out exactly 0 and 1.
  ForegroundStats wide = s;
  wide.p0_5 = -1e9;
  wide.p99_5 = 1e9;
  const Volume3D z = normalize_ct_foreground(im.image, wide);
  double m = 0, n = 0;
  for (std::size_t q = 0; q < z.size(); ++q)
    if (im.mask[q] != 0.0f) {
      m += z[q];
      ++n;
    }
  m /= n;
  double ss = 0;
  for (std::size_t q = 0; q < z.size(); ++q)
    if (im.mask[q] != 0.0f) ss += (z[q] - m) * (z[q] - m);
  EXPECT_NEAR(m, 0.0, 1e-4);
  EXPECT_NEAR(std::sqrt(ss / n), 1.0, 1e-4);
}

TEST(DistanceTransform, MatchesBruteForceOnRandomMasks) {
  std::mt19937_64 rng(11);
  const std::vector<Vec3> spacings{{1, 1, 1}, {1, 1, 2}, {0.5, 1.3, 0.8}};
  for (int trial = 0; trial < 30; ++trial) {
    const Grid g{{8, 8, 8}, spacings[static_cast<std::size_t>(trial) % spacings.size()], {}};
    const Volume3D m = oracle::random_mask(g, rng, 0.7);
    for (bool border : {true, false}) {
      const Volume3D dt = distance_transform(m, border ? BorderMode::background : BorderMode::ignore);
      const auto ref = oracle::edt(m, border);
      for (std::size_t n = 0; n < m.size(); ++n) {
        if (std::isinf(ref[n])) {
          EXPECT_TRUE(std::isinf(dt[n]));
        } else {
          EXPECT_NEAR(dt[n], ref[n], 1e-5 * std::max(1.0, ref[n]));
        }
      }
    }
  }
}

TEST(DistanceTransform, SmallCases) {
  const Grid g{{5, 5, 5}, {1, 1, 1}, {}};
  const Volume3D ones(g, VolumeKind::binary, 1.0f);
  EXPECT_FLOAT_EQ(distance_transform(ones)(2, 2, 2), 3.0f);
  Volume3D single(g, VolumeKind::binary);
  single(2, 2, 2) = 1.0f;
  EXPECT_FLOAT_EQ(distance_transform(single)(2, 2, 2), 1.0f);
  const Volume3D zero(g, VolumeKind::binary);
  EXPECT_EQ(distance_transform(zero).count_nonzero(), 0u);

  // Slab two voxels thick along z with spacing 2 mm in z.
  const Grid ga{{6, 6, 6}, {1, 1, 2}, {}};
  Volume3D slab(ga, VolumeKind::binary);
  for (int j = 0; j < 6; ++j)
    for (int i = 0; i < 6; ++i) slab(i, j, 2) = slab(i, j, 3) = 1.0f;
  const Volume3D dt = distance_transform(slab);
  const auto ref = oracle::edt(slab, true);
  for (std::size_t n = 0; n < slab.size(); ++n) EXPECT_FLOAT_EQ(dt[n], static_cast<float>(ref[n]));
}

TEST(Components, LargestOfTwoBlobs) {
  const Grid g{{10, 10, 10}, {1, 1, 1}, {}};
  Volume3D m(g, VolumeKind::binary);
  for (int i = 0; i < 10; ++i) m(i, 1, 1) = 1.0f;  // 10 voxels
  for (int i = 0; i < 3; ++i) m(i, 7, 7) = 1.0f;   // 3 voxels
  const Volume3D l = largest_connected_component(m, Connectivity::twenty_six);
  EXPECT_EQ(l.count_nonzero(), 10u);
  EXPECT_EQ(l(0, 7, 7), 0.0f);
  EXPECT_EQ(largest_connected_component(l, Connectivity::twenty_six), l);
  EXPECT_EQ(largest_connected_component(Volume3D(g, VolumeKind::binary), Connectivity::six).count_nonzero(), 0u);
}

TEST(Components, DiagonalNeighboursDependOnConnectivity) {
  const Grid g{{4, 4, 4}, {1, 1, 1}, {}};
  Volume3D m(g, VolumeKind::binary);
  m(1, 1, 1) = 1.0f;
  m(2, 2, 2) = 1.0f;
  EXPECT_EQ(largest_connected_component(m, Connectivity::twenty_six).count_nonzero(), 2u);
  const Volume3D six = largest_connected_component(m, Connectivity::six);
  EXPECT_EQ(six.count_nonzero(), 1u);
  EXPECT_EQ(six(1, 1, 1), 1.0f);  // tie goes to the smaller linear index
}

TEST(Components, MatchesFloodFillOracleOnRandomMasks) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Grid g{{9, 9, 9}, {1, 1, 1}, {}};
    const Volume3D m = oracle::random_mask(g, rng, 0.3);
    for (auto conn : {Connectivity::six, Connectivity::twenty_six}) {
      // Flood fill from every unvisited voxel in linear order; keep the first largest.
      std::vector<int> label(m.size(), -1);
      std::vector<std::size_t> sizes;
      for (std::size_t s = 0; s < m.size(); ++s) {
        if (m[s] == 0.0f || label[s] >= 0) continue;
        const int id = static_cast<int>(sizes.size());
        std::vector<std::size_t> stack{s};
        label[s] = id;
        std::size_t count = 0;
        while (!stack.empty()) {
          const auto q = g.unravel(stack.back());
          stack.pop_back();
          ++count;
          for (int dk = -1; dk <= 1; ++dk)
            for (int dj = -1; dj <= 1; ++dj)
              for (int di = -1; di <= 1; ++di) {
                const int manhattan = std::abs(di) + std::abs(dj) + std::abs(dk);
                if (manhattan == 0 || (conn == Connectivity::six && manhattan > 1)) continue;
                const int a = q[0] + di, b = q[1] + dj, c = q[2] + dk;
                if (!g.in_bounds(a, b, c)) continue;
                const auto r = g.index(a, b, c);
                if (m[r] == 0.0f || label[r] >= 0) continue;
                label[r] = id;
                stack.push_back(r);
              }
        }
        sizes.push_back(count);
      }
      const Volume3D got = largest_connected_component(m, conn);
      if (sizes.empty()) {
        EXPECT_EQ(got.count_nonzero(), 0u);
        continue;
      }
      const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
      for (std::size_t n = 0; n < m.size(); ++n) EXPECT_EQ(got[n] != 0.0f, label[n] == best);
    }
  }
}
