#include "lfat/prover.hpp"

#include <algorithm>
#include <iostream>
#include <thread>

namespace lfat::prover {

// ---------------------------------------------------------------- registry

TriggerRegistry::TriggerRegistry(std::vector<std::string> known_triggers)
    : known_(std::move(known_triggers)) {
  for (const auto& id : known_) slots_.emplace(id, Slot{});
}

void TriggerRegistry::arm(const proto::Challenge& challenge) {
  std::lock_guard lock(mu_);
  auto it = slots_.find(challenge.trigger_id);
  if (it == slots_.end()) {
    throw Error(Errc::UnknownTrigger, "trigger '" + challenge.trigger_id + "' is not registered");
  }
  if (it->second.armed || it->second.event) {
    throw Error(Errc::AlreadyArmed, "trigger '" + challenge.trigger_id + "' is already armed");
  }
  it->second.armed = true;
}

bool TriggerRegistry::signal(const std::string& trigger_id, std::optional<pid_t> pid) {
  {
    std::lock_guard lock(mu_);
    auto it = slots_.find(trigger_id);
    if (it == slots_.end() || !it->second.armed) {
      ++ignored_;
      return false;
    }
    it->second.armed = false;
    it->second.event = TriggerEvent{TriggerEvent::Kind::Fired, pid};
    ++fired_;
  }
  cv_.notify_all();
  return true;
}

void TriggerRegistry::target_exited(const std::string& trigger_id) {
  {
    std::lock_guard lock(mu_);
    auto it = slots_.find(trigger_id);
    if (it == slots_.end() || !it->second.armed) return;
    it->second.armed = false;
    it->second.event = TriggerEvent{TriggerEvent::Kind::TargetExited, std::nullopt};
  }
  cv_.notify_all();
}

std::optional<TriggerEvent> TriggerRegistry::wait(const std::string& trigger_id,
                                                  std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  auto it = slots_.find(trigger_id);
  if (it == slots_.end()) return std::nullopt;
  Slot& slot = it->second;
  cv_.wait_for(lock, timeout, [&] { return slot.event.has_value(); });
  std::optional<TriggerEvent> ev = std::move(slot.event);
  slot.event.reset();
  slot.armed = false;
  return ev;
}

bool TriggerRegistry::is_armed(const std::string& trigger_id) const {
  std::lock_guard lock(mu_);
  auto it = slots_.find(trigger_id);
  return it != slots_.end() && it->second.armed;
}

// ---------------------------------------------------------------- responses

proto::AttestationResponse build_response(TraceWindow window, const proto::Challenge& challenge,
                                          const proto::Key& key, const std::string& prover_id) {
  proto::AttestationResponse r;
  r.nonce = challenge.nonce;
  r.prover_id = prover_id;
  r.window = std::move(window);
  r.tag = proto::sign_response(r, key);
  return r;
}

std::string_view to_string(Backend b) { return b == Backend::Synthetic ? "synthetic" : "perf"; }

Backend parse_backend(std::string_view text) {
  if (text == "synthetic") return Backend::Synthetic;
  if (text == "perf") return Backend::Perf;
  throw Error(Errc::InvalidArgument, "unknown counter backend '" + std::string(text) + "'");
}

// ---------------------------------------------------------------- agent

ProverAgent::ProverAgent(ProverConfig cfg, proto::Key key, PerfSourceFactory perf_factory)
    : cfg_(std::move(cfg)),
      key_(key),
      perf_factory_(perf_factory ? std::move(perf_factory) : PerfSourceFactory(open_perf_source)),
      registry_(cfg_.triggers) {}

AttestResult ProverAgent::attest(const proto::Challenge& challenge) {
  const std::uint64_t round = rounds_++;
  try {
    if (challenge.period_us == 0 || challenge.duration_us < challenge.period_us) {
      throw Error(Errc::InvalidArgument, "challenge window parameters are invalid");
    }
    registry_.arm(challenge);
    return cfg_.backend == Backend::Synthetic ? attest_synthetic(challenge, round)
                                              : attest_perf(challenge);
  } catch (const Error& e) {
    return proto::ErrorReport{e.code(), e.what()};
  }
}

AttestResult ProverAgent::attest_synthetic(const proto::Challenge& challenge,
                                           std::uint64_t round) {
  const sim::RunSpec spec{cfg_.workload, cfg_.seed + round, sim::default_profiles(),
                          sim::kDefaultInputVariation};
  const sim::SyntheticRun run(spec);
  std::optional<std::uint64_t> entry;
  if (auto stage = sim::trigger_stage(challenge.trigger_id)) entry = run.stage_entry(*stage);

  // The simulated application runs until its trigger point (or exits
  // without reaching it) concurrently with this attestation.
  std::thread app([&] {
    if (entry) {
      registry_.signal(challenge.trigger_id);
    } else {
      registry_.target_exited(challenge.trigger_id);
    }
  });
  const auto timeout = std::chrono::milliseconds(challenge.duration_us / 1000 + cfg_.grace_ms);
  const auto event = registry_.wait(challenge.trigger_id, timeout);
  app.join();
  if (!event || event->kind != TriggerEvent::Kind::Fired) {
    return proto::ErrorReport{Errc::NoTrigger,
                              "application finished without reaching " + challenge.trigger_id};
  }

  VirtualClock virtual_clock;
  SteadySamplingClock steady_clock;
  SamplingClock& clock =
      cfg_.realtime ? static_cast<SamplingClock&>(steady_clock) : virtual_clock;
  sim::SyntheticSource source(run, clock, *entry);
  TraceWindow window = sample_window(source, clock, {challenge.period_us, challenge.duration_us},
                                     challenge.trigger_id);
  return build_response(std::move(window), challenge, key_, cfg_.prover_id);
}

AttestResult ProverAgent::attest_perf(const proto::Challenge& challenge) {
  const auto timeout = std::chrono::milliseconds(challenge.duration_us / 1000 + cfg_.grace_ms);
  const auto event = registry_.wait(challenge.trigger_id, timeout);
  if (!event || event->kind != TriggerEvent::Kind::Fired) {
    return proto::ErrorReport{Errc::NoTrigger,
                              "trigger " + challenge.trigger_id + " did not fire in time"};
  }
  if (!event->pid) {
    return proto::ErrorReport{Errc::SourceFailure, "trigger signal carried no process id"};
  }
  std::unique_ptr<CounterSource> source = perf_factory_(*event->pid);
  SteadySamplingClock clock;
  TraceWindow window = sample_window(*source, clock, {challenge.period_us, challenge.duration_us},
                                     challenge.trigger_id);
  return build_response(std::move(window), challenge, key_, cfg_.prover_id);
}

void ProverAgent::handle_connection(net::Stream stream) {
  try {
    stream.set_timeout(std::chrono::seconds(10));
    auto frame = stream.recv_frame();
    if (!frame) return;
    if (frame->type != proto::MessageType::Challenge) {
      const auto err = proto::encode_error({Errc::InvalidArgument, "expected a challenge"});
      stream.send_frame(proto::MessageType::Error, err);
      return;
    }
    const proto::Challenge challenge = proto::decode_challenge(frame->payload);
    const AttestResult result = attest(challenge);
    if (const auto* resp = std::get_if<proto::AttestationResponse>(&result)) {
      stream.send_frame(proto::MessageType::Response, proto::encode_response_payload(*resp));
    } else {
      stream.send_frame(proto::MessageType::Error,
                        proto::encode_error(std::get<proto::ErrorReport>(result)));
    }
  } catch (const std::exception& e) {
    std::cerr << "lfat prover: connection failed: " << e.what() << '\n';
  }
}

void ProverAgent::serve(net::Listener& listener, std::size_t max_rounds) {
  {
    std::lock_guard lock(listeners_mu_);
    listeners_.push_back(&listener);
  }
  std::vector<std::thread> workers;
  std::size_t served = 0;
  while (!stopping_ && (max_rounds == 0 || served < max_rounds)) {
    auto stream = listener.accept();
    if (!stream) break;
    ++served;
    workers.emplace_back([this, s = std::move(*stream)]() mutable { handle_connection(std::move(s)); });
  }
  for (auto& t : workers) t.join();
  std::lock_guard lock(listeners_mu_);
  std::erase(listeners_, &listener);
}

void ProverAgent::serve_triggers(net::Listener& channel) {
  {
    std::lock_guard lock(listeners_mu_);
    listeners_.push_back(&channel);
  }
  std::vector<std::thread> clients;
  while (!stopping_) {
    auto stream = channel.accept();
    if (!stream) break;
    clients.emplace_back([this, s = std::move(*stream)]() mutable {
      try {
        s.set_timeout(std::chrono::seconds(5));
        const auto pid = s.peer_pid();
        while (auto line = s.read_line(kMaxTriggerLine)) {
          registry_.signal(*line, pid);
        }
      } catch (const std::exception& e) {
        std::cerr << "lfat prover: trigger channel client failed: " << e.what() << '\n';
      }
    });
  }
  for (auto& t : clients) t.join();
  std::lock_guard lock(listeners_mu_);
  std::erase(listeners_, &channel);
}

void ProverAgent::stop() {
  stopping_ = true;
  std::lock_guard lock(listeners_mu_);
  for (auto* l : listeners_) l->shutdown();
}

void signal_trigger(const std::string& channel_path, const std::string& trigger_id) {
  if (!valid_identifier(trigger_id)) {
    throw Error(Errc::InvalidArgument, "invalid trigger_id '" + trigger_id + "'");
  }
  net::Stream s = net::connect_unix(channel_path);
  const std::string line = trigger_id + "\n";
  s.write_all({reinterpret_cast<const std::uint8_t*>(line.data()), line.size()});
}

}  // namespace lfat::prover
