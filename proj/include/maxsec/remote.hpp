#pragma once

#include "maxsec/tap.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <variant>

namespace maxsec::remote {

// Line protocol, one request per line:
//   SHIFT <n> <tms_hex> <tdi_hex>  ->  OK <tdo_hex> | ERR <message>
//   RESET                          ->  OK
// Hex fields are little-endian bit-packed; padding bits above n are zero.

struct ShiftRequest {
    BitVector tms;
    BitVector tdi;
};
struct ResetRequest {};
using Request = std::variant<ShiftRequest, ResetRequest>;

std::string format_shift(const BitVector& tms, const BitVector& tdi);
Request parse_request(std::string_view line);

// Answers one request line against `target`. Never throws; protocol errors become "ERR ...".
std::string handle_line(std::string_view line, tap::Transport& target);

// Serves requests from `in` until EOF.
void serve_stream(std::istream& in, std::ostream& out, tap::Transport& target);

inline constexpr std::chrono::milliseconds kDefaultTimeout{2000};

class RemoteTransport final : public tap::Transport {
public:
    RemoteTransport(const std::string& host, std::uint16_t port,
                    std::chrono::milliseconds timeout = kDefaultTimeout);
    ~RemoteTransport() override;
    RemoteTransport(const RemoteTransport&) = delete;
    RemoteTransport& operator=(const RemoteTransport&) = delete;

    bool clock(bool tms, bool tdi) override;
    BitVector shift(const BitVector& tms, const BitVector& tdi) override;
    std::uint64_t cycles() const override { return cycles_; }

    void reset_target();

private:
    std::string transact(const std::string& request);
    std::string read_line();

    int fd_ = -1;
    std::chrono::milliseconds timeout_;
    std::string buffer_;
    std::uint64_t cycles_ = 0;
};

// "host:port" -> parts. Throws FormatError.
std::pair<std::string, std::uint16_t> parse_endpoint(std::string_view endpoint);

// TCP server speaking the line protocol. Connections are served one at a time
// against the single target, which keeps the one-owner rule for the device.
class TcpServer {
public:
    TcpServer(tap::Transport& target, std::uint16_t port, const std::string& bind = "127.0.0.1");
    ~TcpServer();
    TcpServer(const TcpServer&) = delete;
    TcpServer& operator=(const TcpServer&) = delete;

    std::uint16_t port() const { return port_; }

    // Blocks until stop() is called. max_connections = 0 means unlimited.
    void run(std::size_t max_connections = 0);
    void stop() { stop_ = true; }

private:
    void serve_connection(int fd);

    tap::Transport& target_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> stop_{false};
};

} // namespace maxsec::remote
