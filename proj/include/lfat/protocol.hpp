#ifndef LFAT_PROTOCOL_HPP_
#define LFAT_PROTOCOL_HPP_

// Challenge/response messages, their canonical byte layout, keyed response
// authentication (HMAC-SHA256) and the nonce ledger that enforces
// single-use, time-bounded challenges.

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "lfat/trace.hpp"

namespace lfat::proto {

using Bytes = std::vector<std::uint8_t>;
using Nonce = std::array<std::uint8_t, 16>;
using Tag = std::array<std::uint8_t, 32>;
using Key = std::array<std::uint8_t, 32>;

inline constexpr std::uint64_t kGraceMs = 5000;
inline constexpr std::size_t kRetention = std::size_t{1} << 16;
inline constexpr std::uint64_t kDefaultPeriodUs = 1000;
inline constexpr std::uint64_t kDefaultDurationUs = 300000;
inline constexpr std::string_view kResponseMagic = "LFAT1";
inline constexpr std::size_t kMaxFrameBytes = std::size_t{64} << 20;

enum class MessageType : std::uint8_t { Challenge = 0x01, Response = 0x02, Error = 0x03 };

struct Challenge {
  Nonce nonce{};
  std::string trigger_id;
  std::uint64_t period_us = kDefaultPeriodUs;
  std::uint64_t duration_us = kDefaultDurationUs;
  std::uint64_t issued_at_ms = 0;

  friend bool operator==(const Challenge&, const Challenge&) = default;
};

struct AttestationResponse {
  Nonce nonce{};
  std::string prover_id;
  TraceWindow window;
  Tag tag{};
};

/// Prover-side failure reported instead of a response (UnknownTrigger,
/// AlreadyArmed, NoTrigger, SourceFailure ...).
struct ErrorReport {
  Errc code = Errc::NoTrigger;
  std::string message;
};

enum class VerifyStatus {
  Accept,
  BadTag,
  UnknownNonce,
  ExpiredNonce,
  ReplayedNonce,
  MalformedResponse,
};

const char* to_string(VerifyStatus s);

/// Fills its argument with fresh random bytes.
using NonceSource = std::function<void(std::span<std::uint8_t>)>;
/// Milliseconds since the Unix epoch.
using MillisClock = std::function<std::uint64_t()>;

NonceSource system_nonce_source();
std::uint64_t unix_now_ms();

/// Outstanding and consumed nonces of one verifier. Thread-safe; every
/// check-and-consume is serialised.
class NonceLedger {
 public:
  explicit NonceLedger(std::size_t retention = kRetention, MillisClock clock = unix_now_ms);

  /// Registers a fresh challenge valid for `ttl_ms` from now. Returns false
  /// if the nonce is already known (issued or consumed).
  bool issue(const Challenge& challenge, std::uint64_t ttl_ms);

  /// Checks that `nonce` is outstanding and unexpired and, when `accept`
  /// approves the stored challenge, consumes it. A nonce whose check fails
  /// after lookup (expired, rejected by `accept`) is retired as well, so
  /// every challenge gets exactly one verification attempt.
  VerifyStatus consume(const Nonce& nonce,
                       const std::function<bool(const Challenge&)>& accept = {});

  bool is_outstanding(const Nonce& nonce) const;
  bool is_consumed(const Nonce& nonce) const;
  std::size_t outstanding_count() const;
  std::size_t consumed_count() const;
  std::uint64_t now_ms() const { return clock_(); }

 private:
  struct NonceHash {
    std::size_t operator()(const Nonce& n) const noexcept;
  };
  struct Pending {
    Challenge challenge;
    std::uint64_t expires_at_ms;
  };

  void retire(const Nonce& nonce);

  std::size_t retention_;
  MillisClock clock_;
  mutable std::mutex mu_;
  std::unordered_map<Nonce, Pending, NonceHash> issued_;
  std::unordered_set<Nonce, NonceHash> consumed_;
  std::deque<Nonce> consumed_order_;
};

/// TTL granted to a challenge: the monitoring window plus kGraceMs.
std::uint64_t challenge_ttl_ms(std::uint64_t duration_us);

/// Creates a challenge with a fresh nonce and registers it in `ledger`.
/// Throws Errc::InvalidArgument for parameters violating the window
/// invariants.
Challenge make_challenge(std::string trigger_id, std::uint64_t period_us,
                         std::uint64_t duration_us, NonceLedger& ledger,
                         const NonceSource& rng = system_nonce_source());

/// "LFAT1" | nonce | lp(prover_id) | lp(trigger_id) | u64 period_us |
/// u64 duration_us | u64 sample count | samples (4 x u64 each). Integers are
/// little-endian, lp() is a u32 length prefix. The tag is not included.
/// Throws Errc::FieldTooLong when an identifier exceeds 64 bytes.
Bytes canonical_bytes(const AttestationResponse& response);

/// Inverse of canonical_bytes. The window's truncated flag is derived from
/// the sample count. Throws Errc::FormatError.
AttestationResponse parse_canonical(std::span<const std::uint8_t> bytes);

Tag hmac_sha256(const Key& key, std::span<const std::uint8_t> message);
Tag sign_response(const AttestationResponse& response, const Key& key);

struct VerifyResult {
  VerifyStatus status = VerifyStatus::MalformedResponse;
  std::optional<AttestationResponse> response;  // set once the tag checked out
  std::string detail;
};

/// Authenticates before parsing: the tag is checked over the raw canonical
/// bytes, then the body is decoded and matched against the outstanding
/// challenge. `message` is canonical bytes followed by the 32-byte tag.
VerifyResult verify_response_bytes(std::span<const std::uint8_t> message, const Key& key,
                                   NonceLedger& ledger);
VerifyResult verify_response(const AttestationResponse& response, const Key& key,
                             NonceLedger& ledger);

// Wire framing: u32 LE frame length, then type byte and payload.
Bytes encode_challenge(const Challenge& c);
Challenge decode_challenge(std::span<const std::uint8_t> payload);
Bytes encode_response_payload(const AttestationResponse& r);  // canonical | tag
Bytes encode_error(const ErrorReport& e);
ErrorReport decode_error(std::span<const std::uint8_t> payload);

Bytes frame(MessageType type, std::span<const std::uint8_t> payload);

struct Frame {
  MessageType type;
  Bytes payload;
};

/// Splits one complete frame (length prefix included). Throws
/// Errc::FormatError on a bad length or unknown type.
Frame unframe(std::span<const std::uint8_t> bytes);

Key parse_key_hex(std::string_view hex);
/// Reads a key file holding 64 hex characters (surrounding whitespace allowed).
Key load_key_file(const std::string& path);
std::string to_hex(std::span<const std::uint8_t> bytes);

}  // namespace lfat::proto

#endif  // LFAT_PROTOCOL_HPP_
