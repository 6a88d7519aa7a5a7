// Raw ICMP echo transport. Linux only; needs CAP_NET_RAW.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/ip.h>
#include <netinet/ip_icmp.h>
#include <poll.h>
#include <sys/socket.h>
#include <time.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <thread>

#include "vesper/prober.hpp"

namespace vesper::prober {
namespace {

constexpr std::size_t kIcmpHeaderBytes = 8;
constexpr double kSpinWindowNs = 50'000.0;  // busy-wait the last 50 us

std::uint16_t checksum(const std::uint8_t* data, std::size_t len) {
  std::uint32_t sum = 0;
  for (std::size_t i = 0; i + 1 < len; i += 2) sum += (data[i] << 8) | data[i + 1];
  if (len & 1U) sum += data[len - 1] << 8;
  while (sum >> 16) sum = (sum & 0xffffU) + (sum >> 16);
  return static_cast<std::uint16_t>(~sum);
}

std::vector<std::uint8_t> echo_request(std::uint16_t id, std::uint16_t seq, std::size_t payload) {
  std::vector<std::uint8_t> pkt(kIcmpHeaderBytes + payload, 0);  // zero-filled payload
  pkt[0] = ICMP_ECHO;
  pkt[1] = 0;
  pkt[4] = static_cast<std::uint8_t>(id >> 8);
  pkt[5] = static_cast<std::uint8_t>(id & 0xff);
  pkt[6] = static_cast<std::uint8_t>(seq >> 8);
  pkt[7] = static_cast<std::uint8_t>(seq & 0xff);
  const std::uint16_t c = checksum(pkt.data(), pkt.size());
  pkt[2] = static_cast<std::uint8_t>(c >> 8);
  pkt[3] = static_cast<std::uint8_t>(c & 0xff);
  return pkt;
}

struct EchoReply {
  std::uint16_t id = 0;
  std::uint16_t seq = 0;
  int ttl = 0;
  in_addr_t source = 0;
};

// Parses an IPv4 datagram carrying an ICMP echo reply.
std::optional<EchoReply> parse_reply(const std::uint8_t* buf, std::size_t len) {
  if (len < 20) return std::nullopt;
  const std::size_t ihl = static_cast<std::size_t>(buf[0] & 0x0f) * 4;
  if (len < ihl + kIcmpHeaderBytes) return std::nullopt;
  const std::uint8_t* icmp = buf + ihl;
  if (icmp[0] != ICMP_ECHOREPLY) return std::nullopt;
  EchoReply r;
  r.ttl = buf[8];
  std::memcpy(&r.source, buf + 12, sizeof r.source);
  r.id = static_cast<std::uint16_t>((icmp[4] << 8) | icmp[5]);
  r.seq = static_cast<std::uint16_t>((icmp[6] << 8) | icmp[7]);
  return r;
}

sockaddr_in resolve(const std::string& target) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  if (inet_pton(AF_INET, target.c_str(), &addr.sin_addr) != 1) {
    throw ParameterError("not an IPv4 address: " + target);
  }
  return addr;
}

void sleep_until_ns(std::int64_t deadline) {
  const double remaining = static_cast<double>(deadline - monotonic_ns());
  if (remaining > kSpinWindowNs) {
    const auto coarse = static_cast<std::int64_t>(remaining - kSpinWindowNs);
    timespec ts{static_cast<time_t>(coarse / 1'000'000'000), static_cast<long>(coarse % 1'000'000'000)};
    nanosleep(&ts, nullptr);
  }
  while (monotonic_ns() < deadline) {
  }
}

}  // namespace

std::int64_t monotonic_ns() {
  timespec ts{};
  clock_gettime(CLOCK_MONOTONIC, &ts);
  return static_cast<std::int64_t>(ts.tv_sec) * 1'000'000'000 + ts.tv_nsec;
}

LiveTransport::LiveTransport() {
  fd_ = ::socket(AF_INET, SOCK_RAW, IPPROTO_ICMP);
  if (fd_ < 0) {
    const int err = errno;
    if (err == EPERM || err == EACCES) {
      throw PrivilegeError("raw ICMP socket refused (" + std::string(std::strerror(err)) +
                           "); run as root or grant CAP_NET_RAW");
    }
    throw TransportError("socket(SOCK_RAW, IPPROTO_ICMP): " + std::string(std::strerror(err)));
  }
  next_id_ = static_cast<std::uint16_t>(::getpid() & 0xffff);
}

LiveTransport::~LiveTransport() {
  if (fd_ >= 0) ::close(fd_);
}

std::int64_t LiveTransport::now_ns() { return monotonic_ns(); }

void LiveTransport::wait(double seconds) {
  if (seconds > 0.0) sleep_until_ns(monotonic_ns() + static_cast<std::int64_t>(seconds * 1e9));
}

RawProbe LiveTransport::send_probe(const std::string& target, const signal::ExcitationSignal& x,
                                   const ProbeOptions& opts) {
  const sockaddr_in dst = resolve(target);
  const std::uint16_t id = next_id_++;
  MatchTable table(id, x.size());
  std::vector<std::vector<std::uint8_t>> packets;
  packets.reserve(x.size());
  for (std::size_t n = 0; n < x.size(); ++n) {
    packets.push_back(echo_request(id, static_cast<std::uint16_t>(n), icmp_payload_bytes(x.sizes[n])));
  }

  const double spacing_ns = 1e9 / opts.rate_hz;
  const std::int64_t epoch = monotonic_ns() + 1'000'000;  // 1 ms to spin up the receiver
  const auto last_deadline =
      epoch + static_cast<std::int64_t>(spacing_ns * static_cast<double>(x.size() - 1) +
                                        opts.timeout_s * 1e9);
  std::atomic<bool> aborted{false};

  // Echo Receiver.
  std::thread receiver([&] {
    std::vector<std::uint8_t> buf(65536);
    while (monotonic_ns() < last_deadline && table.received() < x.size() && !aborted) {
      pollfd pfd{fd_, POLLIN, 0};
      if (::poll(&pfd, 1, 5) <= 0) continue;
      sockaddr_in from{};
      socklen_t fl = sizeof from;
      const ssize_t got = ::recvfrom(fd_, buf.data(), buf.size(), 0,
                                     reinterpret_cast<sockaddr*>(&from), &fl);
      const std::int64_t t = monotonic_ns();
      if (got <= 0) continue;
      auto r = parse_reply(buf.data(), static_cast<std::size_t>(got));
      if (!r || r->source != dst.sin_addr.s_addr) continue;
      table.record_rx(r->id, r->seq, static_cast<double>(t - epoch));
    }
  });

  // Excitation Emitter.
  for (std::size_t n = 0; n < x.size() && !aborted; ++n) {
    sleep_until_ns(epoch + static_cast<std::int64_t>(spacing_ns * static_cast<double>(n)));
    const std::int64_t t = monotonic_ns();
    const auto& pkt = packets[n];
    if (::sendto(fd_, pkt.data(), pkt.size(), 0, reinterpret_cast<const sockaddr*>(&dst),
                 sizeof dst) < 0) {
      aborted = true;
      break;
    }
    table.record_tx(static_cast<std::uint16_t>(n), static_cast<double>(t - epoch));
  }
  receiver.join();

  RawProbe p = table.snapshot(target, epoch);
  p.aborted = aborted;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.rx_ns[i] && *p.rx_ns[i] - p.tx_ns[i] > opts.timeout_s * 1e9) p.rx_ns[i].reset();
  }
  return p;
}

std::vector<std::optional<double>> LiveTransport::isolated_pings(const std::string& target,
                                                                 std::uint32_t bytes,
                                                                 std::size_t count) {
  std::vector<std::optional<double>> out;
  signal::ExcitationSignal one;
  one.sizes = {bytes};
  ProbeOptions opts;
  opts.rate_hz = 1.0;
  opts.timeout_s = 1.0;
  for (std::size_t i = 0; i < count; ++i) {
    RawProbe p = send_probe(target, one, opts);
    if (p.rx_ns[0]) {
      out.emplace_back((*p.rx_ns[0] - p.tx_ns[0]) * 1e-9);
    } else {
      out.emplace_back(std::nullopt);
    }
    wait(0.01);
  }
  return out;
}

std::vector<int> LiveTransport::reply_ttls(const std::string& target, std::size_t count) {
  const sockaddr_in dst = resolve(target);
  std::vector<int> ttls;
  std::vector<std::uint8_t> buf(65536);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint16_t id = next_id_++;
    const auto pkt = echo_request(id, static_cast<std::uint16_t>(i), 0);
    if (::sendto(fd_, pkt.data(), pkt.size(), 0, reinterpret_cast<const sockaddr*>(&dst),
                 sizeof dst) < 0) {
      continue;
    }
    const std::int64_t deadline = monotonic_ns() + 1'000'000'000;
    while (monotonic_ns() < deadline) {
      pollfd pfd{fd_, POLLIN, 0};
      if (::poll(&pfd, 1, 10) <= 0) continue;
      const ssize_t got = ::recv(fd_, buf.data(), buf.size(), 0);
      if (got <= 0) continue;
      auto r = parse_reply(buf.data(), static_cast<std::size_t>(got));
      if (r && r->id == id && r->source == dst.sin_addr.s_addr) {
        ttls.push_back(r->ttl);
        break;
      }
    }
  }
  return ttls;
}

}  // namespace vesper::prober
