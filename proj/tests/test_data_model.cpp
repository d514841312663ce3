#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "pinv/data_model.hpp"
#include "pinv/error.hpp"

using namespace pinv;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& body) {
  const auto dir = std::filesystem::temp_directory_path() / "pinv_tests";
  std::filesystem::create_directories(dir);
  const auto p = dir / name;
  std::ofstream(p) << body;
  return p;
}

ParameterDomain two_param_domain() {
  return {{"mfp", "ratio"}, {500.0, 0.001}, {3000.0, 0.1}};
}

}  // namespace

TEST(LatLon, PoleAndAxes) {
  const auto pole = latlon_to_unit(90.0, 123.0);
  EXPECT_DOUBLE_EQ(pole[0], 0.0);
  EXPECT_DOUBLE_EQ(pole[1], 0.0);
  EXPECT_DOUBLE_EQ(pole[2], 1.0);
  const auto y = latlon_to_unit(0.0, 90.0);
  EXPECT_NEAR(y[0], 0.0, 1e-15);
  EXPECT_NEAR(y[1], 1.0, 1e-15);
  EXPECT_NEAR(y[2], 0.0, 1e-15);
}

TEST(LatLon, RoundTrip) {
  const auto v = latlon_to_unit(-30.0, 240.0);
  // closed form
  const double lat = -30.0 * std::numbers::pi / 180.0, lon = 240.0 * std::numbers::pi / 180.0;
  EXPECT_NEAR(v[0], std::cos(lat) * std::cos(lon), 1e-15);
  EXPECT_NEAR(v[1], std::cos(lat) * std::sin(lon), 1e-15);
  EXPECT_NEAR(v[2], std::sin(lat), 1e-15);
  const auto [la, lo] = unit_to_latlon(v);
  EXPECT_NEAR(la, -30.0, 1e-9 * 180.0 / std::numbers::pi);
  EXPECT_NEAR(lo, 240.0, 1e-9 * 180.0 / std::numbers::pi);
}

TEST(LatLon, RejectsBadLatitude) {
  EXPECT_THROW(latlon_to_unit(90.5, 0.0), ValidationError);
  EXPECT_THROW(latlon_to_unit(std::nan(""), 0.0), ValidationError);
}

TEST(FieldCsv, SingleRowLatLon) {
  const auto p = temp_file("one.csv", "lat_deg,lon_deg,exposure_s,count,background_rate\n0,0,100.0,7,0.05\n");
  const auto f = load_field_csv(p);
  ASSERT_EQ(f.size(), 1u);
  EXPECT_NEAR(f.locations[0].direction[0], 1.0, 1e-15);
  EXPECT_EQ(f.counts[0], 7);
  EXPECT_DOUBLE_EQ(f.exposures[0], 100.0);
  EXPECT_DOUBLE_EQ(f.backgrounds[0], 0.05);
}

TEST(FieldCsv, ZeroExposureRejected) {
  const auto p = temp_file("zero.csv", "lat_deg,lon_deg,exposure_s,count,background_rate\n0,0,0,7,0.05\n");
  EXPECT_THROW(load_field_csv(p), ValidationError);
}

TEST(FieldCsv, MalformedRowNamesLineAndColumn) {
  const auto p = temp_file("bad.csv",
                           "lat_deg,lon_deg,exposure_s,count,background_rate\n0,0,1,7,0.05\n0,0,1,x,0.05\n");
  try {
    load_field_csv(p);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(":3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("count"), std::string::npos) << msg;
  }
}

TEST(FieldCsv, ThreeRowRoundTrip) {
  const auto p = temp_file("three.csv",
                           "lat_deg,lon_deg,exposure_s,count,background_rate\n"
                           "10,20,150.5,3,0.01\n-45,300,99.25,1234567,0\n89,359.5,1e3,0,2.5\n");
  const auto f = load_field_csv(p);
  ASSERT_EQ(f.size(), 3u);
  EXPECT_EQ(f.counts[0], 3);
  EXPECT_EQ(f.counts[1], 1234567);
  EXPECT_EQ(f.counts[2], 0);
  const auto out = std::filesystem::temp_directory_path() / "pinv_tests" / "three_out.csv";
  write_field_csv(f, out);
  const auto g = load_field_csv(out);
  ASSERT_EQ(g.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(g.counts[i], f.counts[i]);
    EXPECT_EQ(g.exposures[i], f.exposures[i]);
    EXPECT_EQ(g.backgrounds[i], f.backgrounds[i]);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(g.locations[i].direction[k], f.locations[i].direction[k], 1e-12);
  }
}

TEST(SimulatorCsv, TwoRunsThreePoints) {
  const auto p = temp_file("sim.csv",
                           "run_id,mfp,ratio,lat_deg,lon_deg,rate\n"
                           "a,1000,0.01,0,0,1.5\na,1000,0.01,0,90,2.5\na,1000,0.01,45,10,3\n"
                           "b,2000,0.05,0,0,0.5\nb,2000,0.05,0,90,0.25\nb,2000,0.05,45,10,0\n");
  const auto c = load_simulator_csv(p, two_param_domain());
  EXPECT_EQ(c.n_runs(), 2u);
  EXPECT_EQ(c.n_grid(), 3u);
  EXPECT_EQ(c.stacked_size(), 6u);
  EXPECT_DOUBLE_EQ(c.rates(1, 1), 0.25);
}

TEST(SimulatorCsv, DuplicateRunIdRejected) {
  const auto p = temp_file("dup.csv",
                           "run_id,mfp,ratio,lat_deg,lon_deg,rate\n"
                           "a,1000,0.01,0,0,1.5\na,1000,0.01,0,90,2.5\n"
                           "b,2000,0.05,0,0,0.5\nb,2000,0.05,0,90,0.25\n"
                           "a,1000,0.01,0,0,9\na,1000,0.01,0,90,9\n");
  EXPECT_THROW(load_simulator_csv(p, two_param_domain()), ValidationError);
}

TEST(SimulatorCsv, InconsistentGridRejected) {
  const auto p = temp_file("grid.csv",
                           "run_id,mfp,ratio,lat_deg,lon_deg,rate\n"
                           "a,1000,0.01,0,0,1.5\na,1000,0.01,0,90,2.5\n"
                           "b,2000,0.05,0,0,0.5\nb,2000,0.05,0,91,0.25\n");
  EXPECT_THROW(load_simulator_csv(p, two_param_domain()), ValidationError);
}

TEST(SimulatorCsv, OutOfDomainRejected) {
  const auto p = temp_file("dom.csv",
                           "run_id,mfp,ratio,lat_deg,lon_deg,rate\n"
                           "a,100,0.01,0,0,1.5\na,100,0.01,0,90,2.5\n");
  EXPECT_THROW(load_simulator_csv(p, two_param_domain()), ValidationError);
}

TEST(SimulatorCsv, RoundTrip) {
  SimulatorCorpus c;
  c.domain = two_param_domain();
  c.designs.resize(2, 2);
  c.designs << 600.0, 0.002, 2900.0, 0.0999;
  c.grid = {SpatialLocation::from_latlon(10.0, 20.0), SpatialLocation::from_latlon(-5.0, 300.0)};
  c.rates.resize(2, 2);
  c.rates << 0.1, 0.2, 0.3, 1.0 / 3.0;
  const auto dir = std::filesystem::temp_directory_path() / "pinv_tests";
  write_simulator_csv(c, dir / "sim_rt.csv");
  const auto d = load_simulator_csv(dir / "sim_rt.csv", c.domain);
  ASSERT_EQ(d.n_runs(), 2u);
  for (int r = 0; r < 2; ++r) {
    for (int k = 0; k < 2; ++k) {
      EXPECT_NEAR(d.designs(r, k), c.designs(r, k), 1e-12 * std::abs(c.designs(r, k)));
      EXPECT_NEAR(d.rates(r, k), c.rates(r, k), 1e-12 * std::abs(c.rates(r, k)));
    }
  }
}

TEST(Domain, JsonRoundTrip) {
  const auto dom = two_param_domain();
  const auto p = std::filesystem::temp_directory_path() / "pinv_tests" / "domain.json";
  write_domain(dom, p);
  const auto d = load_domain(p);
  EXPECT_EQ(d.names, dom.names);
  EXPECT_EQ(d.lower, dom.lower);
  EXPECT_EQ(d.upper, dom.upper);
}

TEST(Stack, RowOrderAndNormalization) {
  SimulatorCorpus c;
  c.domain = {{"u"}, {0.0}, {1.0}};
  c.designs.resize(2, 1);
  c.designs << 0.2, 0.8;
  c.grid = {SpatialLocation::from_latlon(0, 0), SpatialLocation::from_latlon(0, 90)};
  c.rates.resize(2, 2);
  c.rates << 1, 2, 3, 4;
  const auto s = stack(c);
  ASSERT_EQ(s.size(), 4u);
  EXPECT_DOUBLE_EQ(s.responses[0], 1);
  EXPECT_DOUBLE_EQ(s.responses[1], 2);
  EXPECT_DOUBLE_EQ(s.responses[2], 3);
  EXPECT_DOUBLE_EQ(s.responses[3], 4);
  EXPECT_DOUBLE_EQ(s.inputs(0, 3), 0.2);
  EXPECT_DOUBLE_EQ(s.inputs(3, 3), 0.8);
  EXPECT_DOUBLE_EQ(s.inputs(0, 0), 1.0);  // x = 1 maps to 1
  EXPECT_NEAR(s.inputs(1, 0), 0.5, 1e-15);
}

TEST(Stack, SingleRunConstantColumns) {
  SimulatorCorpus c;
  c.domain = {{"u"}, {0.0}, {2.0}};
  c.designs.resize(1, 1);
  c.designs << 1.0;
  for (int j = 0; j < 4; ++j) c.grid.push_back(SpatialLocation::from_latlon(0, 30.0 * j));
  c.rates = Eigen::MatrixXd::Ones(1, 4);
  const auto s = stack(c);
  ASSERT_EQ(s.size(), 4u);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(s.inputs(i, 3), 0.5);
}

TEST(Stack, NormalizationBijection) {
  const auto dom = two_param_domain();
  EXPECT_DOUBLE_EQ(dom.normalize(0, 500.0), 0.0);
  for (double x : {500.0, 1234.5678, 3000.0}) EXPECT_NEAR(dom.denormalize(0, dom.normalize(0, x)), x, 1e-12 * x);
  const auto maps = input_normalization(dom);
  ASSERT_EQ(maps.size(), 5u);
  EXPECT_DOUBLE_EQ(maps[0].apply(-1.0), 0.0);
  EXPECT_DOUBLE_EQ(maps[4].apply(0.1), 1.0);
}
