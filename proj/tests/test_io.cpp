#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "aftpic/io.hpp"
#include "aftpic/simulation.hpp"
#include "oracles.hpp"

using namespace aftpic;

namespace {

CsvTable csv(const std::string& text, const std::string& source = "t.csv") {
  std::istringstream in(text);
  return read_csv(in, source);
}

void expect_same(const Dataset& a, const Dataset& b) {
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(a.x_names, b.x_names);
  EXPECT_EQ(a.z_names, b.z_names);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& s = a.subjects[i];
    const auto& t = b.subjects[i];
    EXPECT_EQ(s.id, t.id);
    EXPECT_EQ(s.kind, t.kind);
    EXPECT_EQ(s.y_left, t.y_left);
    EXPECT_EQ(s.y_right, t.y_right);
    EXPECT_EQ(s.x, t.x);
    EXPECT_EQ(s.z, t.z) << "subject " << s.id;
  }
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(FormatDouble, ShortestRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 12345.678, -0.0}) EXPECT_EQ(parse_double(format_double(v)), v);
  EXPECT_EQ(format_double(kInf), "inf");
  EXPECT_TRUE(std::isinf(*parse_double("inf")));
  EXPECT_FALSE(parse_double("1.5x").has_value());
  EXPECT_FALSE(parse_double("").has_value());
}

TEST(ReadCsv, QuotesBomAndBlankLines) {
  const CsvTable t = csv("\xEF\xBB\xBFid,name\n\n1,\"a, \"\"b\"\"\"\r\n2 , c \n");
  EXPECT_EQ(t.header, (std::vector<std::string>{"id", "name"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][1], "a, \"b\"");
  EXPECT_EQ(t.rows[1][0], "2");
  EXPECT_EQ(t.where(1), "t.csv:4");
}

TEST(ReadCsv, Errors) {
  EXPECT_THROW(csv(""), InvalidInput);
  EXPECT_NE(message_of([] { csv("a,b\n1\n"); }).find("t.csv:2"), std::string::npos);
  EXPECT_THROW(csv("a\n\"open\n"), InvalidInput);
  EXPECT_THROW(read_csv_file("/nonexistent/x.csv"), IoError);
}

TEST(Ingest, WorkedExampleTwoSubjects) {
  // Subject 1: z switches on at 0.5, right-censored at 0.9.
  // Subject 2: constant z, event bracketed in (0.4, 0.8].
  const CsvTable lng = csv(
      "id,start,end,status,treat\n"
      "1,0,0.5,0,0\n"
      "1,0.5,0.9,0,1\n"
      "2,0,0.4,0,0\n"
      "2,0.4,0.8,1,0\n");
  const CsvTable sub = csv(
      "id,yL,yR,kind,age\n"
      "1,0.9,inf,right,61\n"
      "2,0.4,0.8,interval,47\n");
  const Dataset d = ingest(lng, sub);
  EXPECT_EQ(d.x_names, std::vector<std::string>{"age"});
  EXPECT_EQ(d.z_names, std::vector<std::string>{"treat"});
  ASSERT_EQ(d.size(), 2u);
  const auto& s1 = d.subjects[0];
  EXPECT_EQ(s1.kind, CensoringKind::Right);
  EXPECT_EQ(s1.y_left, 0.9);
  EXPECT_EQ(s1.z.segments(), 2u);
  EXPECT_EQ(s1.z.value_at(0.7)[0], 1.0);
  EXPECT_EQ(s1.x[0], 61.0);
  const auto& s2 = d.subjects[1];
  EXPECT_EQ(s2.kind, CensoringKind::Interval);
  EXPECT_EQ(s2.z.segments(), 1u);  // equal values merged
  EXPECT_EQ(s2.y_right, 0.8);
}

TEST(Ingest, CarryForwardAndFixedCovariateFromLongTable) {
  const CsvTable lng = csv(
      "id,start,end,status,z,sex\n"
      "a,0,1,0,2,1\n"
      "a,1,2,0,,1\n"
      "a,2,inf,0,3,1\n");
  const CsvTable sub = csv("id,yL,yR,kind\na,2.5,,right\n");
  ColumnMapping m;
  m.x_columns = {"sex"};
  m.x_explicit = true;
  m.z_columns = {"z"};
  m.z_explicit = true;
  const Dataset d = ingest(lng, sub, m);
  EXPECT_EQ(d.subjects[0].x[0], 1.0);
  EXPECT_EQ(d.subjects[0].z.segments(), 2u);
  EXPECT_EQ(d.subjects[0].z.breakpoints()[1], 2.0);
  EXPECT_TRUE(std::isinf(d.subjects[0].y_right));
}

TEST(Ingest, RejectsMalformedInput) {
  const std::string sub = "id,yL,yR,kind,x\n1,0.5,1,interval,0\n";
  auto fails_with = [&](const std::string& lng, const std::string& subj, const std::string& needle) {
    const std::string msg = message_of([&] { ingest(csv(lng, "long.csv"), csv(subj, "sub.csv")); });
    EXPECT_NE(msg.find(needle), std::string::npos) << "got: " << msg;
  };
  fails_with("id,start,end,status,z\n1,0,1,0,0\n1,0.5,2,0,1\n", sub, "overlaps");
  fails_with("id,start,end,status,z\n1,0,1,0,0\n1,1.5,2,0,1\n", sub, "gap");
  fails_with("id,start,end,status,z\n1,0.1,1,0,0\n", sub, "must start at 0");
  fails_with("id,start,end,status,z\n1,0,inf,0,0\n1,5,6,0,1\n", sub, "only the last");
  fails_with("id,start,end,status,z\n1,0,1,2,0\n", sub, "unknown status");
  fails_with("id,start,end,status,z\n1,0,1,0,0\n", "id,yL,yR,kind,x\n1,0.5,1,sometimes,0\n", "sometimes");
  fails_with("id,start,end,status,z\n1,0,1,0,0\n", "id,yL,yR,kind,x\n1,0.5,1,interval,\n", "time-fixed covariate");
  fails_with("id,start,end,status,z\n1,0,1,0,\n", sub, "missing value");
  fails_with("id,start,end,status,z\n1,0,1,0,0\n2,0,1,0,0\n", sub, "no entry in the subjects table");
  fails_with("id,start,end,status,z\n1,0,1,0,0\n", "id,yL,yR,kind,x\n1,0.5,1,interval,0\n1,0.5,1,interval,0\n",
             "duplicate id");
  fails_with("id,start,end,status,z\n", "id,yL,yR,kind,x\n", "empty dataset");
  fails_with("id,start,end,status,z\n1,0,1,0,0\n", "id,yL,yR,kind,x\n1,0.9,0.5,interval,0\n", "sub.csv:2");
}

TEST(IngestStrict, InfersCensoringFromStatus) {
  const CsvTable lng = csv(
      "id,start,end,status,z,x\n"
      "r,0,1,0,0,1\n"
      "r,1,2,0,1,1\n"
      "l,0,1,1,0,0\n"
      "i,0,1,0,0,0\n"
      "i,1,3,1,0,0\n");
  ColumnMapping m;
  m.x_columns = {"x"};
  const Dataset d = ingest_strict(lng, m);
  EXPECT_EQ(d.z_names, std::vector<std::string>{"z"});
  ASSERT_EQ(d.size(), 3u);
  EXPECT_EQ(d.subjects[0].kind, CensoringKind::Right);
  EXPECT_EQ(d.subjects[0].y_left, 2.0);
  EXPECT_EQ(d.subjects[0].x[0], 1.0);
  EXPECT_EQ(d.subjects[1].kind, CensoringKind::Left);
  EXPECT_EQ(d.subjects[1].y_right, 1.0);
  EXPECT_EQ(d.subjects[2].kind, CensoringKind::Interval);
  EXPECT_EQ(d.subjects[2].y_left, 1.0);
  EXPECT_EQ(d.subjects[2].y_right, 3.0);
}

TEST(IngestStrict, RejectsReversalAndOpenEnd) {
  EXPECT_NE(message_of([] { ingest_strict(csv("id,start,end,status,z\n1,0,1,1,0\n1,1,2,0,0\n")); })
                .find("returns from 1 to 0"),
            std::string::npos);
  EXPECT_NE(message_of([] { ingest_strict(csv("id,start,end,status,z\n1,0,inf,0,0\n")); }).find("open-ended"),
            std::string::npos);
  ColumnMapping m;
  m.x_columns = {"x"};
  EXPECT_THROW(ingest_strict(csv("id,start,end,status,x\n1,0,1,0,0\n1,1,2,0,1\n"), m), InvalidInput);
}

TEST(EmitIngest, RoundTripIsIdentity) {
  std::mt19937_64 rng(2024);
  for (int rep = 0; rep < 100; ++rep) {
    const Dataset d = oracle::canonical_dataset(rng);
    std::ostringstream lng, sub;
    emit_long(d, lng);
    emit_subjects(d, sub);
    ColumnMapping m;
    m.x_columns = d.x_names;
    m.x_explicit = true;
    m.z_columns = d.z_names;
    m.z_explicit = true;
    const Dataset back = ingest(csv(lng.str(), "long"), csv(sub.str(), "sub"), m);
    expect_same(d, back);
  }
}

TEST(EmitIngest, SimulatedDatasetThroughFiles) {
  SimConfig c;
  c.n = 200;
  const Dataset d = simulate_dataset(c);
  const auto dir = std::filesystem::temp_directory_path() / "aftpic_io_test";
  std::filesystem::create_directories(dir);
  emit_files(d, dir / "data.csv", dir / "subjects.csv");
  expect_same(d, ingest_files(dir / "data.csv", dir / "subjects.csv"));
  std::filesystem::remove_all(dir);
}

TEST(EmitIngest, QuotedIdentifiersSurvive) {
  Dataset d;
  d.x_names = {"dose, mg"};
  SubjectRecord s;
  s.id = "pt \"7\", a";
  s.kind = CensoringKind::Event;
  s.y_left = s.y_right = 1.25;
  s.x = Vector::Constant(1, 3.0);
  s.z = StepTrajectory::zeros(0);
  d.subjects.push_back(s);
  std::ostringstream lng, sub;
  emit_long(d, lng);
  emit_subjects(d, sub);
  expect_same(d, ingest(csv(lng.str()), csv(sub.str())));
}

TEST(FlatConfig, ParsesCommentsQuotesAndSections) {
  std::istringstream in(
      "# fit settings\n[fit]\nm = 7\nparam_tol=1e-7  # tighter\nx_columns = [\"age\", sex]\nlabel = \"a # b\"\n");
  const FlatConfig cfg = parse_flat_config(in, "c.cfg");
  EXPECT_EQ(cfg.at("m"), "7");
  EXPECT_EQ(cfg.at("label"), "a # b");
  FitOptions o;
  const auto unused = apply_fit_options(cfg, o);
  EXPECT_EQ(o.m, 7);
  EXPECT_EQ(o.param_tol, 1e-7);
  EXPECT_EQ(unused, (std::vector<std::string>{"label", "x_columns"}));
  ColumnMapping m;
  apply_column_mapping(cfg, m);
  EXPECT_EQ(m.x_columns, (std::vector<std::string>{"age", "sex"}));
  EXPECT_TRUE(m.x_explicit);
  EXPECT_FALSE(m.z_explicit);
}

TEST(FlatConfig, Errors) {
  std::istringstream bad("just a line\n");
  EXPECT_NE(message_of([&] { parse_flat_config(bad, "c.cfg"); }).find("c.cfg:1"), std::string::npos);
  FitOptions o;
  EXPECT_THROW(apply_fit_options({{"m", "seven"}}, o), InvalidInput);
  EXPECT_THROW(apply_fit_options({{"param_tol", "-1"}}, o), InvalidInput);
  EXPECT_THROW(apply_fit_options({{"smooth_on_refresh", "yes"}}, o), InvalidInput);
  EXPECT_THROW(read_flat_config("/nonexistent.cfg"), IoError);
}

TEST(FlatConfig, EveryRecordedOptionIsSettable) {
  SimConfig c;
  c.n = 60;
  const Dataset d = simulate_dataset(c);
  FitOptions o;
  o.m = 4;
  o.max_outer_iters = 1;
  o.project_on_refresh = false;
  const Json opts = fit_to_json(fit(d, o), d, o).at("options");
  FlatConfig cfg;
  for (const auto& [k, v] : opts.items()) cfg[k] = v.dump();
  FitOptions back;
  EXPECT_TRUE(apply_fit_options(cfg, back).empty());
  EXPECT_EQ(back.max_outer_iters, 1);
  EXPECT_FALSE(back.project_on_refresh);
  EXPECT_TRUE(back.smooth_on_refresh);
}

TEST(FitJson, RoundTripPreservesUnknownFields) {
  SimConfig c;
  c.n = 100;
  const Dataset d = simulate_dataset(c);
  FitOptions o;
  o.m = 5;
  const FitResult f = fit(d, o);
  Json base = {{"user_note", "keep me"}, {"schema_version", 0}};
  const Json j = fit_to_json(f, d, o, base);
  EXPECT_EQ(j.at("user_note"), "keep me");
  EXPECT_EQ(j.at("schema_version"), kFitSchemaVersion);
  const FitArtifact a = fit_artifact_from_json(Json::parse(j.dump()));
  EXPECT_EQ(a.params.beta, f.params.beta);
  EXPECT_EQ(a.params.gamma, f.params.gamma);
  EXPECT_EQ(a.params.theta, f.params.theta);
  EXPECT_EQ(a.cfg.mu(), f.cfg.mu());
  EXPECT_EQ(a.cfg.d2(), f.cfg.d2());
  EXPECT_EQ(a.h, f.h);
  EXPECT_EQ(a.x_names, d.x_names);
  EXPECT_EQ(a.document.at("user_note"), "keep me");
  EXPECT_EQ(j.at("wald").size(), 3u);
}

TEST(FitJson, RejectsNewerSchemaAndMismatches) {
  SimConfig c;
  c.n = 60;
  const Dataset d = simulate_dataset(c);
  FitOptions o;
  o.m = 4;
  const Json j = fit_to_json(fit(d, o), d, o);
  Json newer = j;
  newer["schema_version"] = kFitSchemaVersion + 1;
  EXPECT_THROW(fit_artifact_from_json(newer), InvalidInput);
  Json short_names = j;
  short_names["covariates"]["x"] = {"x1"};
  EXPECT_THROW(fit_artifact_from_json(short_names), InvalidInput);
  Json missing = j;
  missing.erase("basis");
  EXPECT_THROW(fit_artifact_from_json(missing), InvalidInput);
}

TEST(BaselineCsv, GridAndColumns) {
  const BasisConfig cfg((Vector(2) << 0.5, 1.0).finished(), Vector::Constant(2, 0.3), 0.0, 2.0);
  std::ostringstream out;
  write_baseline_csv(cfg, Vector::Ones(2), 5, out);
  const CsvTable t = csv(out.str());
  EXPECT_EQ(t.header, (std::vector<std::string>{"kappa", "hazard", "cumhaz", "survival"}));
  ASSERT_EQ(t.rows.size(), 5u);
  EXPECT_EQ(t.rows[0][2], "0");
  EXPECT_EQ(t.rows[4][0], "2");
}

TEST(Scenarios, CodesAndDefaults) {
  const CsvTable t = csv("scenario,tau,x1,treat\nA,0.3,1,01\nB,0.3,0,11\nC,0,0.5,00\n");
  const auto s = read_scenarios(t, {"x1", "x2"}, {"treat"});
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].x, (Vector(2) << 1.0, 0.0).finished());
  EXPECT_EQ(s[0].z, StepTrajectory::change_point(0.3, Vector::Zero(1), Vector::Ones(1)));
  EXPECT_EQ(s[1].z.segments(), 1u);
  EXPECT_EQ(s[1].z.value_at(0.0)[0], 1.0);
  EXPECT_EQ(s[2].codes, std::vector<std::string>{"00"});
  EXPECT_THROW(read_scenarios(csv("scenario,tau,treat\nA,0.3,02\n"), {}, {"treat"}), InvalidInput);
  EXPECT_THROW(read_scenarios(csv("scenario,tau,other\nA,0.3,1\n"), {}, {"treat"}), InvalidInput);
  EXPECT_THROW(read_scenarios(csv("scenario,tau\nA,-1\n"), {}, {}), InvalidInput);
}
