#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "lfat/prover.hpp"
#include "lfat/verifier.hpp"
#include "support.hpp"

namespace lfat::verifier {
namespace {

proto::Key key_of(std::uint8_t v) {
  proto::Key k;
  k.fill(v);
  return k;
}

void expect_report(const EvaluationReport& r, double acc, std::optional<double> fnr,
                   std::optional<double> fpr, std::optional<double> rec,
                   std::optional<double> prec, std::optional<double> f1) {
  auto near = [](std::optional<double> a, std::optional<double> b) {
    ASSERT_EQ(a.has_value(), b.has_value());
    if (a) EXPECT_NEAR(*a, *b, 1e-15);
  };
  near(r.accuracy, acc);
  near(r.fnr, fnr);
  near(r.fpr, fpr);
  near(r.recall, rec);
  near(r.precision, prec);
  near(r.f1, f1);
}

TEST(Metrics, WorkedExample) {
  const auto r = metrics_from_confusion(98, 5, 95, 2);
  const double p = 98.0 / 103.0, rc = 0.98;
  expect_report(r, 0.965, 0.02, 0.05, 0.98, p, 2 * p * rc / (p + rc));
}

TEST(Metrics, PerfectSeparation) {
  expect_report(metrics_from_confusion(10, 0, 10, 0), 1.0, 0.0, 0.0, 1.0, 1.0, 1.0);
}

TEST(Metrics, ZeroDenominators) {
  const auto r = metrics_from_confusion(0, 0, 7, 0);
  expect_report(r, 1.0, std::nullopt, 0.0, std::nullopt, std::nullopt, std::nullopt);
  EXPECT_NE(report_csv(r).find("NA"), std::string::npos);
  EXPECT_FALSE(metrics_from_confusion(0, 0, 0, 0).accuracy);
  // Defined but both zero: F1 is undefined rather than 0/0.
  EXPECT_FALSE(metrics_from_confusion(0, 3, 3, 3).f1);
}

TEST(Metrics, AllOnes) {
  expect_report(metrics_from_confusion(1, 1, 1, 1), 0.5, 0.5, 0.5, 0.5, 0.5, 0.5);
}

TEST(Metrics, RandomQuadruplesMatchArithmeticOracle) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 500; ++i) {
    const long tp = 1 + rng() % 1000, fp = 1 + rng() % 1000, tn = 1 + rng() % 1000,
               fn = 1 + rng() % 1000;
    const auto r = metrics_from_confusion(tp, fp, tn, fn);
    const long double p = (long double)tp / (tp + fp), rc = (long double)tp / (tp + fn);
    EXPECT_NEAR(*r.accuracy, double((long double)(tp + tn) / (tp + fp + tn + fn)), 1e-15);
    EXPECT_NEAR(*r.precision, double(p), 1e-15);
    EXPECT_NEAR(*r.f1, double(2 * p * rc / (p + rc)), 1e-15);
    EXPECT_NEAR(*r.recall + *r.fnr, 1.0, 1e-15);
    EXPECT_NEAR((double)tn / (tn + fp) + *r.fpr, 1.0, 1e-15);
  }
}

TEST(Metrics, ReferenceFiguresAreInternallyConsistent) {
  // Reference figures: FNR 1.18%, recall 98.82%, precision 96.40%, F1 97.57%.
  EXPECT_NEAR(100.0 - 1.18, 98.82, 1e-12);
  const double p = 0.9640, r = 0.9882;
  EXPECT_LE(std::abs(*f1_score(p, r) * 100.0 - 97.57), 0.05);
  // The same identity through the evaluator, on a matrix with that recall.
  const auto rep = metrics_from_confusion(9882, 369, 9631, 118);
  EXPECT_NEAR(*rep.recall, 0.9882, 1e-12);
  EXPECT_NEAR(*rep.fnr, 0.0118, 1e-12);
  EXPECT_NEAR(*rep.recall, 1.0 - *rep.fnr, 1e-15);
}

TEST(Report, CsvRoundTripAndTable) {
  const auto r = metrics_from_confusion(98, 5, 95, 2);
  const std::string csv = report_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "tp,fp,tn,fn,accuracy,fnr,fpr,recall,precision,f1");
  EXPECT_EQ(parse_report_csv(csv), r);
  const auto undefined = metrics_from_confusion(0, 0, 4, 0);
  EXPECT_EQ(parse_report_csv(report_csv(undefined)), undefined);
  const std::string table = report_table(r);
  EXPECT_NE(table.find("96.50%"), std::string::npos);
  EXPECT_NE(table.find("TP 98"), std::string::npos);
  EXPECT_ERRC(parse_report_csv("tp,fp\n1,2\n"), Errc::FormatError);
}

TEST(TrainingStore, AppendResetPersist) {
  testing::TempDir d;
  TrainingStore s;
  s.append({1.25, 300.5}, "a.csv", 17);
  s.append({0.5, 10}, "b.csv", 18);
  EXPECT_ERRC(s.append({std::nan(""), 1}, "c.csv", 1), Errc::InvalidArgument);
  EXPECT_ERRC(s.append({1, -1}, "c.csv", 1), Errc::InvalidArgument);
  ASSERT_EQ(s.size(), 2u);
  s.save(d / "store.csv");
  const TrainingStore back = TrainingStore::load(d / "store.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.entries()[0].features, (FeatureVector{1.25, 300.5}));
  EXPECT_EQ(back.entries()[1].trace_path, "b.csv");
  EXPECT_EQ(back.entries()[1].timestamp_ms, 18u);
  s.reset();
  EXPECT_EQ(s.size(), 0u);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class SmallDataset : public ::testing::Test {
 protected:
  void SetUp() override {
    manifest = sim::write_dataset(dir.path().string(), sim::generate_dataset(80, 40, 7, 0.5));
  }
  testing::TempDir dir;
  std::string manifest;
};

TEST_F(SmallDataset, TrainSkipsAttacksAndIsDeterministic) {
  const TrainResult a = train(manifest, {5, 0.99, 50});
  EXPECT_EQ(a.skipped_attack, 40u);
  EXPECT_EQ(a.store.size(), 50u);
  EXPECT_EQ(a.model.k(), 5u);
  a.model.save_file(dir / "a.lfm");
  train(manifest, {5, 0.99, 50}).model.save_file(dir / "b.lfm");
  EXPECT_EQ(slurp(dir / "a.lfm"), slurp(dir / "b.lfm"));
}

TEST_F(SmallDataset, InsufficientData) {
  EXPECT_ERRC(train(manifest, {20, 0.99, 5}), Errc::InsufficientData);
}

TEST_F(SmallDataset, EvaluateSeparatesAndIgnoresOrder) {
  const TrainResult t = train(manifest, {5, 0.99, 50});
  sim::Manifest m = sim::read_manifest(manifest);
  const auto r = evaluate(t.model, m, {50});
  EXPECT_EQ(r.tp + r.fn, 40u);
  EXPECT_EQ(r.tn + r.fp, 30u);
  EXPECT_GE(*r.recall, 0.95);

  // Permutation invariance over the evaluated part.
  m.entries.erase(std::remove_if(m.entries.begin(), m.entries.end(),
                                 [](const auto& e) {
                                   return e.label == Label::Normal && e.seed < 7 + 50;
                                 }),
                  m.entries.end());
  const auto base = evaluate(t.model, m, {0});
  EXPECT_EQ(base, r);
  std::mt19937_64 rng(1);
  std::shuffle(m.entries.begin(), m.entries.end(), rng);
  EXPECT_EQ(evaluate(t.model, m, {0}), base);
  sim::Manifest normals = sim::read_manifest(manifest);
  std::erase_if(normals.entries, [](const auto& e) { return e.label == Label::Attack; });
  EXPECT_ERRC(evaluate(t.model, normals, {1000}), Errc::EmptyManifest);
}

TEST_F(SmallDataset, TruncatedNormalsSkippedForTraining) {
  sim::Manifest m = sim::read_manifest(manifest);
  TraceWindow w = read_trace_file(m.resolve(m.entries[0]));
  w.samples.resize(100);
  w.truncated = true;
  write_trace_file(m.resolve(m.entries[0]), w);
  const TrainResult t = train(manifest, {5, 0.99, 50});
  EXPECT_EQ(t.skipped_incomplete, 1u);
  EXPECT_EQ(t.store.size(), 49u);
  const auto v = classify_window(t.model, w);
  EXPECT_EQ(v.decision, lof::Decision::Anomalous);
  EXPECT_TRUE(std::isinf(v.score));
}

lof::LofModel reference_model() {
  std::vector<FeatureVector> fs;
  for (const auto& t : sim::generate_dataset(400, 0, 100000, 0.5)) fs.push_back(compute_features(t.window));
  return lof::LofModel::fit(fs);
}

const lof::LofModel& shared_model() {
  static const lof::LofModel m = reference_model();
  return m;
}

struct ProverFixture {
  explicit ProverFixture(sim::RunMode mode, proto::Key key = key_of(5), std::size_t rounds = 1)
      : listener(net::Listener::tcp({"127.0.0.1", 0})) {
    prover::ProverConfig cfg;
    cfg.workload = mode;
    cfg.seed = 9000;
    cfg.prover_id = "unit-prover";
    cfg.grace_ms = 100;
    agent = std::make_unique<prover::ProverAgent>(cfg, key);
    thread = std::thread([this, rounds] { agent->serve(listener, rounds); });
  }
  ~ProverFixture() {
    agent->stop();
    thread.join();
  }
  net::Endpoint endpoint() const { return {"127.0.0.1", listener.port()}; }

  net::Listener listener;
  std::unique_ptr<prover::ProverAgent> agent;
  std::thread thread;
};

TEST(Attest, HealthyNormalProver) {
  testing::TempDir d;
  AuditLog audit(d / "audit.tsv");
  ProverFixture p(sim::RunMode::Normal);
  Verifier v(shared_model(), key_of(5), proto::system_nonce_source(), &audit);
  const auto out = v.attest(p.endpoint(), "N2-entry");
  EXPECT_TRUE(out.accepted());
  ASSERT_TRUE(out.verdict);
  EXPECT_EQ(out.verdict->decision, lof::Decision::Normal);
  EXPECT_EQ(out.prover_id, "unit-prover");
  EXPECT_GE(out.total_us, 0.0);
  EXPECT_NEAR(out.total_us, out.preprocessing_us + out.prediction_us, 1e-9);
  const std::string log = slurp(d / "audit.tsv");
  EXPECT_NE(log.find("\tunit-prover\tN2-entry\tNormal\t"), std::string::npos);
  EXPECT_EQ(std::count(log.begin(), log.end(), '\t'), 5);
}

TEST(Attest, NodeSkippingProverIsAnomalous) {
  ProverFixture p(sim::RunMode::NodeSkipping);
  Verifier v(shared_model(), key_of(5));
  const auto out = v.attest(p.endpoint(), "N2-entry");
  EXPECT_TRUE(out.accepted());
  ASSERT_TRUE(out.verdict);
  EXPECT_EQ(out.verdict->decision, lof::Decision::Anomalous);
}

TEST(Attest, CodeInjectionProverIsAnomalous) {
  ProverFixture p(sim::RunMode::CodeInjection);
  Verifier v(shared_model(), key_of(5));
  EXPECT_EQ(v.attest(p.endpoint(), "N2-entry").verdict->decision, lof::Decision::Anomalous);
}

TEST(Attest, WrongKeyRejectedWithoutVerdict) {
  ProverFixture p(sim::RunMode::Normal, key_of(6));
  Verifier v(shared_model(), key_of(5));
  const auto out = v.attest(p.endpoint(), "N2-entry");
  EXPECT_EQ(out.protocol_status, proto::VerifyStatus::BadTag);
  EXPECT_FALSE(out.verdict);
}

TEST(Attest, UnknownTriggerReportedByProver) {
  ProverFixture p(sim::RunMode::Normal);
  Verifier v(shared_model(), key_of(5));
  const auto out = v.attest(p.endpoint(), "N5-entry");
  EXPECT_FALSE(out.accepted());
  ASSERT_TRUE(out.prover_error);
  EXPECT_EQ(out.prover_error->code, Errc::UnknownTrigger);
}

TEST(Attest, ReplayingProverIsRejected) {
  // A man in the middle answers every challenge with the first response it
  // captured from the genuine prover.
  ProverFixture genuine(sim::RunMode::Normal);
  auto relay = net::Listener::tcp({"127.0.0.1", 0});
  std::thread mitm([&] {
    std::optional<proto::Bytes> captured;
    for (int i = 0; i < 2; ++i) {
      auto client = relay.accept();
      if (!client) return;
      auto challenge = client->recv_frame();
      if (!captured) {
        auto up = net::connect_tcp(genuine.endpoint(), std::chrono::seconds(2));
        up.send_frame(challenge->type, challenge->payload);
        captured = up.recv_frame()->payload;
      }
      client->send_frame(proto::MessageType::Response, *captured);
    }
  });
  Verifier v(shared_model(), key_of(5));
  const net::Endpoint ep{"127.0.0.1", relay.port()};
  EXPECT_TRUE(v.attest(ep, "N2-entry").accepted());
  const auto second = v.attest(ep, "N2-entry");
  mitm.join();
  EXPECT_EQ(second.protocol_status, proto::VerifyStatus::ReplayedNonce);
  EXPECT_FALSE(second.verdict);
}

TEST(Attest, TruncatedWindowIsAnomalousByPolicy) {
  Verifier v(shared_model(), key_of(5));
  const auto c = v.challenge("N2-entry", {1000, 300000});
  TraceWindow w = *sim::simulate_window(sim::RunSpec{sim::RunMode::Normal, 3}, {1000, 300000});
  w.samples.resize(120);
  w.truncated = true;
  const auto r = prover::build_response(w, c, key_of(5), "p");
  const auto out = v.judge(proto::encode_response_payload(r));
  EXPECT_TRUE(out.accepted());
  EXPECT_TRUE(out.truncated);
  EXPECT_EQ(out.verdict->decision, lof::Decision::Anomalous);
}

TEST(Attest, ImplausibleCountersAreAnomalous) {
  Verifier v(shared_model(), key_of(5));
  const auto c = v.challenge("N2-entry", {1000, 3000});
  TraceWindow w;
  w.trigger_id = "N2-entry";
  w.period_us = 1000;
  w.duration_us = 3000;
  w.samples = {{1000, 100, 1, 0}, {2000, 100, 1, 0}, {3000, 100, 1, 0}};
  const auto out = v.judge(proto::encode_response_payload(prover::build_response(w, c, key_of(5), "p")));
  ASSERT_TRUE(out.verdict);
  EXPECT_EQ(out.verdict->decision, lof::Decision::Anomalous);
}

TEST(Attest, UnreachableProver) {
  auto l = net::Listener::tcp({"127.0.0.1", 0});
  const net::Endpoint ep{"127.0.0.1", l.port()};
  l.shutdown();
  { auto gone = std::move(l); }
  Verifier v(shared_model(), key_of(5));
  EXPECT_ERRC(v.attest(ep, "N2-entry", {}, std::chrono::milliseconds(300)),
              Errc::ProverUnreachable);
}

}  // namespace
}  // namespace lfat::verifier
