#include <gtest/gtest.h>

#include <filesystem>

#include "besn/ca_sim.hpp"
#include "besn/io.hpp"
#include "besn/pipeline.hpp"
#include "oracles.hpp"

using namespace besn;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("besn_test_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string to_ndjson(const BinarySeries& s) {
  std::string out;
  for (int t = 0; t < s.steps(); ++t)
    for (int i = 0; i < s.cells(); ++i)
      out += "{\"t\": " + std::to_string(t) + ", \"cell\": " + std::to_string(i) +
             ", \"value\": " + std::to_string(int(s.at(i, t))) + "}\n";
  return out;
}

}  // namespace

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(SeriesCsv, ParsesExampleRow) {
  const GridSpec g(2, 2);
  const BinarySeries s = parse_series_csv("# comment\ncell_0,cell_1,cell_2,cell_3\n1,0,0,1\n", g);
  ASSERT_EQ(s.steps(), 1);
  EXPECT_EQ(s.at(0, 0), 1);
  EXPECT_EQ(s.at(1, 0), 0);
  EXPECT_EQ(s.at(2, 0), 0);
  EXPECT_EQ(s.at(3, 0), 1);
}

TEST(SeriesCsv, RejectsBadValuesWithLocation) {
  const GridSpec g(2, 2);
  try {
    parse_series_csv("cell_0,cell_1,cell_2,cell_3\n1,0,0,1\n0,2,0,1\n", g);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("'2'"), std::string::npos) << msg;
    EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("cell_1"), std::string::npos) << msg;
  }
  EXPECT_THROW(parse_series_csv("cell_0,cell_1,cell_2\n1,0,0\n", g), DimensionError);
  EXPECT_THROW(parse_series_csv("cell_0,cell_1,cell_2,cell_3\n1,0,1\n", g), DimensionError);
  EXPECT_THROW(parse_series_csv("cell_0,cell_1,cell_2,cell_3\n", g), EmptyInputError);
  EXPECT_THROW(parse_series_csv("a,b,c,d\n1,0,0,1\n", g), ParseError);
}

TEST(SeriesNdjson, ParsesAndValidates) {
  const GridSpec g(1, 2);
  const BinarySeries s = parse_series_ndjson(
      "{\"t\":0,\"cell\":0,\"value\":1}\n{\"t\":0,\"cell\":1,\"value\":0}\n\n"
      "{\"t\":1,\"cell\":1,\"value\":\"1\"}\n{\"t\":1,\"cell\":0,\"value\":1}\n",
      g);
  ASSERT_EQ(s.steps(), 2);
  EXPECT_EQ(s.at(0, 0), 1);
  EXPECT_EQ(s.at(1, 0), 0);
  EXPECT_EQ(s.at(1, 1), 1);
  EXPECT_THROW(parse_series_ndjson("{\"t\":0,\"cell\":0,\"value\":1}\n", g), DimensionError);
  EXPECT_THROW(parse_series_ndjson("{\"t\":0,\"cell\":5,\"value\":1}\n", g), DimensionError);
  EXPECT_THROW(parse_series_ndjson("{\"t\":0,\"cell\":0,\"value\":3}\n", g), ParseError);
  EXPECT_THROW(parse_series_ndjson("{\"t\":0,\"cell\":0}\n", g), ParseError);
  EXPECT_THROW(parse_series_ndjson("{not json}\n", g), ParseError);
  EXPECT_THROW(parse_series_ndjson("{\"t\":0,\"cell\":0,\"value\":1}\n{\"t\":0,\"cell\":0,\"value\":1}\n", g),
               ParseError);
  EXPECT_THROW(parse_series_ndjson("", g), EmptyInputError);
}

TEST(SeriesIo, RoundTripsAreIdentical) {
  const fs::path dir = scratch_dir("roundtrip");
  for (std::uint64_t seed : {1, 2, 3}) {
    const GridSpec g(5, 7);
    const BinarySeries s = simulate(g, quadrant_spread_rules(g), 9, seed);
    const std::string csv = series_to_csv(s, "note");
    const BinarySeries back = parse_series_csv(csv, g);
    EXPECT_EQ(back.values(), s.values());
    EXPECT_EQ(series_to_csv(back, "note"), csv);
    EXPECT_EQ(parse_series_ndjson(to_ndjson(s), g).values(), s.values());

    save_binary_series(s, dir / "s.csv");
    EXPECT_EQ(load_binary_series(dir / "s.csv", g).values(), s.values());
    write_file(dir / "s.ndjson", to_ndjson(s));
    EXPECT_EQ(load_binary_series(dir / "s.ndjson", g).values(), s.values());
  }
  EXPECT_THROW(read_file(dir / "missing.csv"), IoError);
  fs::remove_all(dir);
}

TEST(ValuesCsv, ThresholdSeries) {
  const GridSpec g(1, 3);
  const Eigen::MatrixXd v = parse_values_csv("cell_0,cell_1,cell_2\n0.1,0.5,0.9\n0.7,0.2,0.5\n", g);
  ASSERT_EQ(v.rows(), 3);
  ASSERT_EQ(v.cols(), 2);
  EXPECT_EQ(v(1, 0), 0.5);
  const BinarySeries s = threshold_series(v, g, 0.5);
  EXPECT_EQ(s.at(0, 0), 0);
  EXPECT_EQ(s.at(1, 0), 0);  // strictly greater than the threshold
  EXPECT_EQ(s.at(2, 0), 1);
  EXPECT_EQ(s.at(0, 1), 1);
  EXPECT_THROW(threshold_series(Eigen::MatrixXd::Zero(2, 2), g, 0.5), DimensionError);
}

TEST(Columnar, RoundTripIsBitExact) {
  Philox rng(1);
  ColumnarFile f;
  f.attributes["name"] = "x";
  Eigen::MatrixXd a(3, 4);
  for (auto& v : a.reshaped()) v = rng.normal();
  a(0, 0) = -0.0;
  a(1, 1) = std::numeric_limits<double>::denorm_min();
  f.add("a", a);
  f.add("empty", Eigen::MatrixXd(0, 5));
  const std::string bytes = encode_columnar(f);
  const ColumnarFile g = decode_columnar(bytes);
  EXPECT_EQ(g.attributes["name"], "x");
  EXPECT_EQ(std::memcmp(g.get("a").data(), a.data(), sizeof(double) * 12), 0);
  EXPECT_EQ(g.get("empty").cols(), 5);
  EXPECT_EQ(encode_columnar(g), bytes);
  EXPECT_THROW(g.get("missing"), IoError);
  EXPECT_THROW(decode_columnar("garbage"), IoError);
  EXPECT_THROW(decode_columnar(bytes.substr(0, bytes.size() - 3)), IoError);
}

TEST(Columnar, DrawsRoundTrip) {
  Philox rng(2);
  PosteriorDraws d;
  d.n = 3;
  d.n_h = 2;
  d.n_x = 1;
  d.slab_scale = 2.0;
  d.V.resize(6, 5);
  d.alpha.resize(3, 5);
  d.beta.resize(1, 5);
  d.tau.resize(5);
  d.c_aux.resize(5);
  for (auto* m : {&d.V, &d.alpha, &d.beta})
    for (auto& v : m->reshaped()) v = rng.normal();
  for (auto& v : d.tau) v = rng.uniform();
  for (auto& v : d.c_aux) v = rng.uniform();
  d.chain = {0, 0, 0, 1, 1};
  d.diagnostics.status = FitStatus::Warning;
  d.diagnostics.warnings = {"w"};
  d.diagnostics.divergences = 3;
  const PosteriorDraws b = draws_from_columnar(decode_columnar(encode_columnar(draws_to_columnar(d))));
  EXPECT_EQ(b.V, d.V);
  EXPECT_EQ(b.alpha, d.alpha);
  EXPECT_EQ(b.beta, d.beta);
  EXPECT_EQ(b.tau, d.tau);
  EXPECT_EQ(b.c_aux, d.c_aux);
  EXPECT_EQ(b.chain, d.chain);
  EXPECT_EQ(b.diagnostics.status, FitStatus::Warning);
  EXPECT_EQ(b.diagnostics.divergences, 3);
  EXPECT_EQ(draws_to_csv(b), draws_to_csv(d));
  const std::string csv = draws_to_csv(d);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "chain,draw,tau,c_aux,alpha[0],alpha[1],alpha[2],beta[0],V[0,0],V[1,0],V[2,0],V[0,1],V[1,1],V[2,1]");
}

TEST(Config, ParsesAndRejectsUnknownKeys) {
  const Json j = Json::parse(R"({
    "seed": 7, "members": 4, "train_steps": 10,
    "data": {"rows": 4, "cols": 5, "steps": 11},
    "tuning": {"nu": [0.5], "n_h": [3, 4], "top_k": 5},
    "sampler": {"chains": 2, "warmup": 50, "samples": 40},
    "horseshoe": {"shared_intercept": true},
    "models": ["besn_plus", "logistic"],
    "weight_holdout": [5, 9]
  })");
  const PipelineConfig c = config_from_json(j, "/base");
  EXPECT_EQ(*c.seed, 7u);
  EXPECT_EQ(c.members, 4);
  EXPECT_EQ(c.data.cols, 5);
  EXPECT_EQ(c.grid.n_h, (std::vector<int>{3, 4}));
  EXPECT_EQ(c.top_k, 5u);
  EXPECT_EQ(c.sampler.samples, 40);
  EXPECT_TRUE(c.horseshoe.shared_intercept);
  EXPECT_EQ(c.models.size(), 2u);
  EXPECT_EQ(c.weight_holdout->second, 9);
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(config_hash(c), config_hash(config_from_json(j, "/base")));

  Json bad = j;
  bad["sampler"]["chainz"] = 2;
  EXPECT_THROW(config_from_json(bad), ConfigError);
  bad = j;
  bad["extra"] = 1;
  EXPECT_THROW(config_from_json(bad), ConfigError);
  bad = j;
  bad["models"] = {"besn_pluss"};
  EXPECT_THROW(config_from_json(bad), ConfigError);
  bad = j;
  bad.erase("seed");
  EXPECT_THROW(config_from_json(bad).validate(), ConfigError);
  bad = j;
  bad["members"] = "four";
  EXPECT_THROW(config_from_json(bad), ConfigError);
}
