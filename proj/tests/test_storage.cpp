#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "doctest.h"
#include "seizurecast/error.hpp"
#include "seizurecast/storage.hpp"
#include "synth.hpp"

using namespace seizurecast;
using seizurecast::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

Tensor noise(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  for (auto& v : t.values()) v = n(rng);
  return t;
}

}  // namespace

TEST_CASE("fnv-1a reference vectors") {
  CHECK(fnv1a_hex(std::string_view("")) == "cbf29ce484222325");
  CHECK(fnv1a_hex(std::string_view("a")) == "af63dc4c8601ec8c");
  CHECK(fnv1a_hex(std::string_view("foobar")) == "85944171f73967e8");
  TempDir d("storage");
  std::ofstream(d / "x.txt", std::ios::binary) << "foobar";
  CHECK(hash_file(d / "x.txt") == "85944171f73967e8");
}

TEST_CASE("format_double round-trips") {
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(1.0) == "1");
  CHECK(format_double(std::nan("")) == "nan");
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1e3);
  for (int i = 0; i < 1000; ++i) {
    const double v = n(rng);
    CHECK(std::stod(format_double(v)) == v);
  }
}

TEST_CASE("checkpoint round trip") {
  TempDir d("ckpt");
  const InputGeometry g{23, 13, 30};
  Model2 m({}, g, 42);
  m.set_input_norm(std::vector<double>(13, 0.25), std::vector<double>(13, 1.5));
  save_checkpoint(d / "m2.ckpt", m, 17);
  CheckpointInfo info;
  const auto back = load_checkpoint(d / "m2.ckpt", &info);
  CHECK(info.kind == ModelKind::kModel2);
  CHECK(info.seed == 42);
  CHECK(info.step == 17);
  CHECK(info.geometry == g);
  CHECK(info.architecture_id == "model2-v1");
  REQUIRE(back->params().size() == m.params().size());
  for (std::size_t i = 0; i < m.params().size(); ++i) CHECK(back->params()[i].value == m.params()[i].value);
  CHECK(back->input_scale() == m.input_scale());
  const auto x = noise({2, 23, 13, 30}, 1);
  CHECK(back->predict_proba(x) == m.predict_proba(x));

  Model1Architecture a;
  a.id = "model1-small";
  a.blocks = {{4, 3, 3, 2, 4}};
  a.embedding = 8;
  Model1 m1(a, g, 3);
  save_checkpoint(d / "m1.ckpt", m1);
  const auto b1 = load_checkpoint(d / "m1.ckpt");
  CHECK(b1->kind() == ModelKind::kModel1);
  CHECK(b1->architecture_id() == "model1-small");
  CHECK(b1->parameter_count() == m1.parameter_count());
  CHECK_FALSE(b1->has_input_norm());

  // Corruption is reported.
  auto bytes = slurp(d / "m1.ckpt");
  std::ofstream(d / "bad.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 9);
  CHECK_THROWS_AS(load_checkpoint(d / "bad.ckpt"), ParseError);
  std::ofstream(d / "junk.ckpt", std::ios::binary) << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(d / "junk.ckpt"), ParseError);
}

TEST_CASE("dataset cache round trip") {
  TempDir d("dcache");
  Dataset ds;
  for (int i = 0; i < 4; ++i) {
    LabeledWindow w;
    w.subject_id = 1 + i % 2;
    w.label = i / 2;
    w.source = {"chb0" + std::to_string(1 + i % 2) + "_01.edf", 10.0 * i + 0.25};
    w.samples = noise({23, 64}, static_cast<std::uint64_t>(i));
    ds.windows.push_back(std::move(w));
  }
  ds.recount();
  save_dataset_cache(d / "ds", ds);
  CHECK(std::filesystem::exists(d / "ds.bin"));
  CHECK(std::filesystem::exists(d / "ds.json"));
  const auto csv = lines(slurp(d / "ds.csv"));
  CHECK(csv.size() == 5);
  const auto back = load_dataset_cache(d / "ds");
  REQUIRE(back.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back.windows[i].samples == ds.windows[i].samples);
    CHECK(back.windows[i].subject_id == ds.windows[i].subject_id);
    CHECK(back.windows[i].label == ds.windows[i].label);
    CHECK(back.windows[i].source.file == ds.windows[i].source.file);
    CHECK(back.windows[i].source.start_offset == ds.windows[i].source.start_offset);
  }
  CHECK(back.class_counts == ds.class_counts);
}

TEST_CASE("feature cache round trip") {
  TempDir d("fcache");
  FeatureSet f;
  for (int i = 0; i < 3; ++i) f.push_back(noise({23, 13, 5}, 10 + i), i % 2, 4, {"chb04_07.edf", 2.0 * i});
  save_feature_cache(d / "feat", f);
  const auto back = load_feature_cache(d / "feat");
  REQUIRE(back.size() == 3);
  CHECK(back.maps == f.maps);
  CHECK(back.labels == f.labels);
  CHECK(back.subjects == f.subjects);
  CHECK(back.sources[2].start_offset == 4.0);
}

TEST_CASE("csv shapes") {
  TempDir d("csv");
  const Tensor m = noise({23, 4}, 5);
  const std::vector<double> starts = {0, 10, 20, 30};
  write_channel_matrix_csv(d / "attr.csv", m, starts);
  const auto a = lines(slurp(d / "attr.csv"));
  CHECK(a.size() == 24);
  CHECK(a[0] == "channel,t=0,t=10,t=20,t=30");

  PredictionTrace tr = smooth_and_threshold(std::vector<double>{0.2, 0.7, 0.9, 0.1}, 1);
  write_trace_csv(d / "trace.csv", tr, starts);
  const auto t = lines(slurp(d / "trace.csv"));
  CHECK(t.size() == 5);
  CHECK(t[2] == "10,0.7,0.7,1");

  const std::vector<int> subj = {1, 2}, lab = {0, 1};
  write_embeddings_csv(d / "emb.csv", noise({2, 3}, 6), subj, lab);
  const auto e = lines(slurp(d / "emb.csv"));
  CHECK(e[0] == "subject,label,e_1,e_2,e_3");
  CHECK(e.size() == 3);

  ResultRow r{"fold1", compute_metrics(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}), {{"n", "100"}}};
  ResultRow s{"mean", {}, {}};
  const std::vector<ResultRow> rows = {r, s};
  const std::vector<std::string> extra = {"n"};
  write_results_csv(d / "res.csv", rows, extra);
  const auto rr = lines(slurp(d / "res.csv"));
  CHECK(rr[0] == "id,n,accuracy,sensitivity,specificity,roc_auc,tp,tn,fp,fn");
  CHECK(rr[1] == "fold1,100,1,1,1,1,1,1,0,0");
  CHECK(rr[2] == "mean,,0,0,0,,0,0,0,0");

  write_feature_map_csv(d / "map.csv", noise({2, 3, 4}, 7));
  CHECK(lines(slurp(d / "map.csv")).size() == 7);
}
