#include "maxsec/remote.hpp"

#include "maxsec/errors.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <istream>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <ostream>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

namespace maxsec::remote {

namespace {

std::vector<std::string_view> split_ws(std::string_view s)
{
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r'))
            ++i;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r')
            ++j;
        if (j > i)
            out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

constexpr std::size_t kMaxShiftBits = std::size_t{1} << 24;

void send_all(int fd, const std::string& data)
{
    std::size_t sent = 0;
    while (sent < data.size()) {
        ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR)
                continue;
            throw ChannelError(std::string("send failed: ") + std::strerror(errno));
        }
        sent += static_cast<std::size_t>(n);
    }
}

} // namespace

std::string format_shift(const BitVector& tms, const BitVector& tdi)
{
    return "SHIFT " + std::to_string(tms.size()) + " " + tms.to_hex() + " " + tdi.to_hex();
}

Request parse_request(std::string_view line)
{
    auto parts = split_ws(line);
    if (parts.empty())
        throw FormatError("empty request");
    if (parts[0] == "RESET") {
        if (parts.size() != 1)
            throw FormatError("RESET takes no arguments");
        return ResetRequest{};
    }
    if (parts[0] != "SHIFT")
        throw FormatError("unknown command '" + std::string(parts[0]) + "'");
    if (parts.size() != 4)
        throw FormatError("SHIFT expects <n> <tms_hex> <tdi_hex>");
    std::size_t n = 0;
    auto [ptr, ec] = std::from_chars(parts[1].data(), parts[1].data() + parts[1].size(), n);
    if (ec != std::errc() || ptr != parts[1].data() + parts[1].size())
        throw FormatError("bad bit count");
    if (n == 0 || n > kMaxShiftBits)
        throw FormatError("bit count out of range");
    return ShiftRequest{BitVector::from_hex(n, parts[2]), BitVector::from_hex(n, parts[3])};
}

std::string handle_line(std::string_view line, tap::Transport& target)
{
    try {
        Request req = parse_request(line);
        if (std::holds_alternative<ResetRequest>(req)) {
            BitVector tms(5, true);
            target.shift(tms, BitVector(5));
            return "OK";
        }
        const auto& s = std::get<ShiftRequest>(req);
        return "OK " + target.shift(s.tms, s.tdi).to_hex();
    } catch (const std::exception& e) {
        return std::string("ERR ") + e.what();
    }
}

void serve_stream(std::istream& in, std::ostream& out, tap::Transport& target)
{
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        out << handle_line(line, target) << '\n';
        out.flush();
    }
}

std::pair<std::string, std::uint16_t> parse_endpoint(std::string_view endpoint)
{
    auto colon = endpoint.rfind(':');
    if (colon == std::string_view::npos || colon == 0 || colon + 1 == endpoint.size())
        throw FormatError("endpoint must be host:port");
    unsigned port = 0;
    auto ps = endpoint.substr(colon + 1);
    auto [ptr, ec] = std::from_chars(ps.data(), ps.data() + ps.size(), port);
    if (ec != std::errc() || ptr != ps.data() + ps.size() || port == 0 || port > 65535)
        throw FormatError("bad port in endpoint");
    return {std::string(endpoint.substr(0, colon)), static_cast<std::uint16_t>(port)};
}

RemoteTransport::RemoteTransport(const std::string& host, std::uint16_t port,
                                 std::chrono::milliseconds timeout)
    : timeout_(timeout)
{
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const std::string port_str = std::to_string(port);
    if (int rc = ::getaddrinfo(host.c_str(), port_str.c_str(), &hints, &res); rc != 0)
        throw ChannelError("cannot resolve " + host + ": " + ::gai_strerror(rc));
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
        int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0)
            continue;
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
            fd_ = fd;
            break;
        }
        ::close(fd);
    }
    ::freeaddrinfo(res);
    if (fd_ < 0)
        throw ChannelError("cannot connect to " + host + ":" + port_str);
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

RemoteTransport::~RemoteTransport()
{
    if (fd_ >= 0)
        ::close(fd_);
}

std::string RemoteTransport::read_line()
{
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    for (;;) {
        if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
            std::string line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            if (!line.empty() && line.back() == '\r')
                line.pop_back();
            return line;
        }
        auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - std::chrono::steady_clock::now());
        if (remaining.count() <= 0)
            throw ChannelError("remote target timed out");
        pollfd p{fd_, POLLIN, 0};
        int rc = ::poll(&p, 1, static_cast<int>(remaining.count()));
        if (rc < 0) {
            if (errno == EINTR)
                continue;
            throw ChannelError(std::string("poll failed: ") + std::strerror(errno));
        }
        if (rc == 0)
            throw ChannelError("remote target timed out");
        char chunk[65536];
        ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
        if (n < 0) {
            if (errno == EINTR)
                continue;
            throw ChannelError(std::string("recv failed: ") + std::strerror(errno));
        }
        if (n == 0)
            throw ChannelError("remote target closed the connection");
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

std::string RemoteTransport::transact(const std::string& request)
{
    send_all(fd_, request + "\n");
    std::string reply = read_line();
    if (reply.rfind("ERR", 0) == 0)
        throw ChannelError("remote error: " + (reply.size() > 4 ? reply.substr(4) : reply));
    if (reply != "OK" && reply.rfind("OK ", 0) != 0)
        throw ChannelError("malformed reply: " + reply);
    return reply.size() > 3 ? reply.substr(3) : std::string();
}

bool RemoteTransport::clock(bool tms, bool tdi)
{
    return shift(BitVector::from_uint(tms, 1), BitVector::from_uint(tdi, 1)).get(0);
}

BitVector RemoteTransport::shift(const BitVector& tms, const BitVector& tdi)
{
    if (tms.size() != tdi.size())
        throw LengthMismatch("shift: TMS and TDI lengths differ");
    if (tms.empty())
        return {};
    std::string payload = transact(format_shift(tms, tdi));
    cycles_ += tms.size();
    try {
        return BitVector::from_hex(tms.size(), payload);
    } catch (const FormatError& e) {
        throw ChannelError(std::string("bad TDO field: ") + e.what());
    }
}

void RemoteTransport::reset_target()
{
    transact("RESET");
    cycles_ += 5;
}

TcpServer::TcpServer(tap::Transport& target, std::uint16_t port, const std::string& bind)
    : target_(target)
{
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0)
        throw ChannelError("socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, bind.c_str(), &addr.sin_addr) != 1)
        throw ChannelError("bad bind address " + bind);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
        throw ChannelError(std::string("bind failed: ") + std::strerror(errno));
    if (::listen(listen_fd_, 4) != 0)
        throw ChannelError("listen failed");
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

TcpServer::~TcpServer()
{
    if (listen_fd_ >= 0)
        ::close(listen_fd_);
}

void TcpServer::run(std::size_t max_connections)
{
    std::size_t served = 0;
    while (!stop_) {
        pollfd p{listen_fd_, POLLIN, 0};
        int rc = ::poll(&p, 1, 100);
        if (rc <= 0)
            continue;
        int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0)
            continue;
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        serve_connection(fd);
        ::close(fd);
        if (max_connections != 0 && ++served >= max_connections)
            break;
    }
}

void TcpServer::serve_connection(int fd)
{
    std::string buffer;
    char chunk[65536];
    while (!stop_) {
        pollfd p{fd, POLLIN, 0};
        int rc = ::poll(&p, 1, 100);
        if (rc < 0 && errno != EINTR)
            return;
        if (rc <= 0)
            continue;
        ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
        if (n <= 0)
            return;
        buffer.append(chunk, static_cast<std::size_t>(n));
        std::size_t start = 0;
        std::string replies;
        for (std::size_t nl; (nl = buffer.find('\n', start)) != std::string::npos; start = nl + 1) {
            std::string_view line(buffer.data() + start, nl - start);
            if (!line.empty() && line.back() == '\r')
                line.remove_suffix(1);
            if (line.empty())
                continue;
            replies += handle_line(line, target_);
            replies += '\n';
        }
        buffer.erase(0, start);
        try {
            send_all(fd, replies);
        } catch (const ChannelError&) {
            return;
        }
    }
}

} // namespace maxsec::remote
