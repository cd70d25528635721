#include "lfat/protocol.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/rand.h>

#include <chrono>
#include <cstring>
#include <fstream>
#include <sstream>

namespace lfat::proto {

namespace {

constexpr std::size_t kMaxErrorMessage = 1024;

class Writer {
 public:
  void raw(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::span<const std::uint8_t> raw(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return raw(1)[0]; }
  std::uint32_t u32() {
    auto b = raw(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
  }
  std::uint64_t u64() {
    auto b = raw(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
  }
  std::string str(std::size_t max_len, const char* what) {
    const std::uint32_t len = u32();
    if (len > max_len) fail(std::string(what) + " longer than " + std::to_string(max_len));
    auto b = raw(len);
    return std::string(b.begin(), b.end());
  }
  std::size_t remaining() const { return in_.size() - pos_; }
  std::size_t offset() const { return pos_; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(Errc::FormatError, "offset " + std::to_string(pos_) + ": " + msg);
  }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) fail("truncated message");
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void check_id(std::string_view id, const char* what) {
  if (id.size() > kMaxIdLength) {
    throw Error(Errc::FieldTooLong, std::string(what) + " exceeds " +
                                        std::to_string(kMaxIdLength) + " bytes");
  }
}

}  // namespace

const char* to_string(VerifyStatus s) {
  switch (s) {
    case VerifyStatus::Accept: return "Accept";
    case VerifyStatus::BadTag: return "BadTag";
    case VerifyStatus::UnknownNonce: return "UnknownNonce";
    case VerifyStatus::ExpiredNonce: return "ExpiredNonce";
    case VerifyStatus::ReplayedNonce: return "ReplayedNonce";
    case VerifyStatus::MalformedResponse: return "MalformedResponse";
  }
  return "Unknown";
}

NonceSource system_nonce_source() {
  return [](std::span<std::uint8_t> out) {
    if (RAND_bytes(out.data(), static_cast<int>(out.size())) != 1) {
      throw Error(Errc::IoError, "RAND_bytes failed");
    }
  };
}

std::uint64_t unix_now_ms() {
  using namespace std::chrono;
  return static_cast<std::uint64_t>(
      duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count());
}

// ---------------------------------------------------------------- ledger

std::size_t NonceLedger::NonceHash::operator()(const Nonce& n) const noexcept {
  std::uint64_t a = 0, b = 0;
  std::memcpy(&a, n.data(), 8);
  std::memcpy(&b, n.data() + 8, 8);
  return static_cast<std::size_t>(a ^ (b * 0x9e3779b97f4a7c15ULL));
}

NonceLedger::NonceLedger(std::size_t retention, MillisClock clock)
    : retention_(retention == 0 ? 1 : retention), clock_(std::move(clock)) {}

bool NonceLedger::issue(const Challenge& challenge, std::uint64_t ttl_ms) {
  std::lock_guard lock(mu_);
  if (issued_.count(challenge.nonce) || consumed_.count(challenge.nonce)) return false;
  issued_.emplace(challenge.nonce, Pending{challenge, clock_() + ttl_ms});
  return true;
}

void NonceLedger::retire(const Nonce& nonce) {
  issued_.erase(nonce);
  if (consumed_.insert(nonce).second) {
    consumed_order_.push_back(nonce);
    while (consumed_order_.size() > retention_) {
      consumed_.erase(consumed_order_.front());
      consumed_order_.pop_front();
    }
  }
}

VerifyStatus NonceLedger::consume(const Nonce& nonce,
                                  const std::function<bool(const Challenge&)>& accept) {
  std::lock_guard lock(mu_);
  if (consumed_.count(nonce)) return VerifyStatus::ReplayedNonce;
  auto it = issued_.find(nonce);
  if (it == issued_.end()) return VerifyStatus::UnknownNonce;
  if (clock_() > it->second.expires_at_ms) {
    retire(nonce);
    return VerifyStatus::ExpiredNonce;
  }
  const bool ok = !accept || accept(it->second.challenge);
  retire(nonce);
  return ok ? VerifyStatus::Accept : VerifyStatus::MalformedResponse;
}

bool NonceLedger::is_outstanding(const Nonce& nonce) const {
  std::lock_guard lock(mu_);
  return issued_.count(nonce) != 0;
}

bool NonceLedger::is_consumed(const Nonce& nonce) const {
  std::lock_guard lock(mu_);
  return consumed_.count(nonce) != 0;
}

std::size_t NonceLedger::outstanding_count() const {
  std::lock_guard lock(mu_);
  return issued_.size();
}

std::size_t NonceLedger::consumed_count() const {
  std::lock_guard lock(mu_);
  return consumed_.size();
}

std::uint64_t challenge_ttl_ms(std::uint64_t duration_us) { return duration_us / 1000 + kGraceMs; }

Challenge make_challenge(std::string trigger_id, std::uint64_t period_us,
                         std::uint64_t duration_us, NonceLedger& ledger, const NonceSource& rng) {
  if (!valid_identifier(trigger_id)) {
    throw Error(Errc::InvalidArgument, "invalid trigger_id '" + trigger_id + "'");
  }
  if (period_us == 0 || duration_us < period_us) {
    throw Error(Errc::InvalidArgument, "need period_us > 0 and duration_us >= period_us");
  }
  Challenge c;
  c.trigger_id = std::move(trigger_id);
  c.period_us = period_us;
  c.duration_us = duration_us;
  c.issued_at_ms = ledger.now_ms();
  // A colliding nonce is only possible with a broken or test source; bound
  // the retries so such a source cannot spin forever.
  for (int attempt = 0; attempt < 16; ++attempt) {
    rng(c.nonce);
    if (ledger.issue(c, challenge_ttl_ms(duration_us))) return c;
  }
  throw Error(Errc::IoError, "nonce source keeps returning known nonces");
}

// ---------------------------------------------------------------- canonical bytes

Bytes canonical_bytes(const AttestationResponse& r) {
  check_id(r.prover_id, "prover_id");
  check_id(r.window.trigger_id, "trigger_id");
  Writer w;
  w.raw({reinterpret_cast<const std::uint8_t*>(kResponseMagic.data()), kResponseMagic.size()});
  w.raw(r.nonce);
  w.str(r.prover_id);
  w.str(r.window.trigger_id);
  w.u64(r.window.period_us);
  w.u64(r.window.duration_us);
  w.u64(r.window.samples.size());
  for (const auto& s : r.window.samples) {
    w.u64(s.t_offset_us);
    w.u64(s.d_instructions);
    w.u64(s.d_cycles);
    w.u64(s.d_cache_accesses);
  }
  return w.take();
}

AttestationResponse parse_canonical(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.raw(kResponseMagic.size());
  if (!std::equal(magic.begin(), magic.end(), kResponseMagic.begin())) r.fail("bad magic");
  AttestationResponse out;
  auto nonce = r.raw(out.nonce.size());
  std::copy(nonce.begin(), nonce.end(), out.nonce.begin());
  out.prover_id = r.str(kMaxIdLength, "prover_id");
  out.window.trigger_id = r.str(kMaxIdLength, "trigger_id");
  out.window.period_us = r.u64();
  out.window.duration_us = r.u64();
  const std::uint64_t count = r.u64();
  if (out.window.period_us == 0 || out.window.duration_us < out.window.period_us) {
    r.fail("period/duration violate window invariants");
  }
  if (count > out.window.expected_samples() || count > r.remaining() / 32) {
    r.fail("implausible sample count " + std::to_string(count));
  }
  out.window.samples.resize(count);
  for (auto& s : out.window.samples) {
    s.t_offset_us = r.u64();
    s.d_instructions = r.u64();
    s.d_cycles = r.u64();
    s.d_cache_accesses = r.u64();
  }
  if (r.remaining() != 0) r.fail("trailing bytes after samples");
  out.window.truncated = count < out.window.expected_samples();
  if (!valid_identifier(out.window.trigger_id)) r.fail("invalid trigger_id");
  for (std::size_t i = 1; i < out.window.samples.size(); ++i) {
    if (out.window.samples[i].t_offset_us <= out.window.samples[i - 1].t_offset_us) {
      r.fail("sample offsets not strictly increasing");
    }
  }
  return out;
}

Tag hmac_sha256(const Key& key, std::span<const std::uint8_t> message) {
  Tag tag{};
  unsigned int len = 0;
  if (HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), message.data(), message.size(),
           tag.data(), &len) == nullptr ||
      len != tag.size()) {
    throw Error(Errc::IoError, "HMAC-SHA256 computation failed");
  }
  return tag;
}

Tag sign_response(const AttestationResponse& response, const Key& key) {
  return hmac_sha256(key, canonical_bytes(response));
}

VerifyResult verify_response_bytes(std::span<const std::uint8_t> message, const Key& key,
                                   NonceLedger& ledger) {
  VerifyResult result;
  if (message.size() < Tag{}.size()) {
    result.detail = "message shorter than a tag";
    return result;
  }
  const auto body = message.first(message.size() - Tag{}.size());
  const auto tag = message.last(Tag{}.size());
  const Tag expected = hmac_sha256(key, body);
  if (CRYPTO_memcmp(expected.data(), tag.data(), expected.size()) != 0) {
    result.status = VerifyStatus::BadTag;
    result.detail = "authentication tag mismatch";
    return result;
  }
  try {
    result.response = parse_canonical(body);
  } catch (const Error& e) {
    result.status = VerifyStatus::MalformedResponse;
    result.detail = e.what();
    return result;
  }
  std::copy(tag.begin(), tag.end(), result.response->tag.begin());

  const auto& resp = *result.response;
  std::string mismatch;
  result.status = ledger.consume(resp.nonce, [&](const Challenge& c) {
    if (resp.window.trigger_id != c.trigger_id) {
      mismatch = "trigger_id '" + resp.window.trigger_id + "' does not match challenged '" +
                 c.trigger_id + "'";
    } else if (resp.window.period_us != c.period_us || resp.window.duration_us != c.duration_us) {
      mismatch = "window parameters differ from the challenge";
    }
    return mismatch.empty();
  });
  if (!mismatch.empty()) result.detail = mismatch;
  return result;
}

VerifyResult verify_response(const AttestationResponse& response, const Key& key,
                             NonceLedger& ledger) {
  Bytes message;
  try {
    message = canonical_bytes(response);
  } catch (const Error& e) {
    return VerifyResult{VerifyStatus::MalformedResponse, std::nullopt, e.what()};
  }
  message.insert(message.end(), response.tag.begin(), response.tag.end());
  return verify_response_bytes(message, key, ledger);
}

// ---------------------------------------------------------------- framing

Bytes encode_challenge(const Challenge& c) {
  check_id(c.trigger_id, "trigger_id");
  Writer w;
  w.raw(c.nonce);
  w.str(c.trigger_id);
  w.u64(c.period_us);
  w.u64(c.duration_us);
  w.u64(c.issued_at_ms);
  return w.take();
}

Challenge decode_challenge(std::span<const std::uint8_t> payload) {
  Reader r(payload);
  Challenge c;
  auto nonce = r.raw(c.nonce.size());
  std::copy(nonce.begin(), nonce.end(), c.nonce.begin());
  c.trigger_id = r.str(kMaxIdLength, "trigger_id");
  c.period_us = r.u64();
  c.duration_us = r.u64();
  c.issued_at_ms = r.u64();
  if (r.remaining() != 0) r.fail("trailing bytes after challenge");
  if (!valid_identifier(c.trigger_id)) r.fail("invalid trigger_id");
  if (c.period_us == 0 || c.duration_us < c.period_us) r.fail("invalid window parameters");
  return c;
}

Bytes encode_response_payload(const AttestationResponse& resp) {
  Bytes out = canonical_bytes(resp);
  out.insert(out.end(), resp.tag.begin(), resp.tag.end());
  return out;
}

Bytes encode_error(const ErrorReport& e) {
  Writer w;
  w.u8(static_cast<std::uint8_t>(e.code));
  w.str(e.message.substr(0, kMaxErrorMessage));
  return w.take();
}

ErrorReport decode_error(std::span<const std::uint8_t> payload) {
  Reader r(payload);
  ErrorReport e;
  const auto code = r.u8();
  if (code > static_cast<std::uint8_t>(Errc::IoError)) r.fail("unknown error code");
  e.code = static_cast<Errc>(code);
  e.message = r.str(kMaxErrorMessage, "error message");
  if (r.remaining() != 0) r.fail("trailing bytes after error report");
  return e;
}

Bytes frame(MessageType type, std::span<const std::uint8_t> payload) {
  if (payload.size() + 1 > kMaxFrameBytes) throw Error(Errc::FieldTooLong, "frame too large");
  Writer w;
  w.u32(static_cast<std::uint32_t>(payload.size() + 1));
  w.u8(static_cast<std::uint8_t>(type));
  w.raw(payload);
  return w.take();
}

Frame unframe(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const std::uint32_t len = r.u32();
  if (len == 0 || len > kMaxFrameBytes) r.fail("bad frame length");
  if (r.remaining() != len) r.fail("frame length does not match buffer");
  const auto type = r.u8();
  if (type < 0x01 || type > 0x03) r.fail("unknown message type");
  auto payload = r.raw(len - 1);
  return Frame{static_cast<MessageType>(type), Bytes(payload.begin(), payload.end())};
}

// ---------------------------------------------------------------- keys

Key parse_key_hex(std::string_view hex) {
  if (hex.size() != 64) throw Error(Errc::FormatError, "key must be exactly 64 hex characters");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  Key key{};
  for (std::size_t i = 0; i < key.size(); ++i) {
    const int hi = nibble(hex[2 * i]);
    const int lo = nibble(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw Error(Errc::FormatError, "key contains a non-hex character");
    key[i] = static_cast<std::uint8_t>(hi << 4 | lo);
  }
  return key;
}

Key load_key_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open key file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  const auto last = text.find_last_not_of(" \t\r\n");
  if (first == std::string::npos) throw Error(Errc::FormatError, "key file " + path + " is empty");
  try {
    return parse_key_hex(std::string_view(text).substr(first, last - first + 1));
  } catch (const Error& e) {
    throw Error(Errc::FormatError, path + ": " + e.what());
  }
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out += kDigits[b >> 4];
    out += kDigits[b & 0xf];
  }
  return out;
}

}  // namespace lfat::proto
