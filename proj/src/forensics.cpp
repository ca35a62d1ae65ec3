#include "maxsec/forensics.hpp"

#include "maxsec/errors.hpp"
#include "text_util.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <numeric>

namespace maxsec::forensics {

std::vector<ByteDiff> diff_images(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b,
                                  const RegionMap* regions)
{
    if (a.size() != b.size())
        throw LengthMismatch("images differ in length: " + std::to_string(a.size()) + " vs "
                             + std::to_string(b.size()));
    std::vector<ByteDiff> out;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i])
            continue;
        ByteDiff d{static_cast<std::uint32_t>(i), a[i], b[i], std::nullopt};
        if (regions)
            if (const Region* r = regions->find(d.offset))
                d.region = r->access;
        out.push_back(d);
    }
    return out;
}

crypto::AesKey unscramble_key(std::span<const std::uint8_t> field, const ScrambleMap& map)
{
    if (field.size() != 16)
        throw LengthMismatch("key field must be 16 bytes, got " + std::to_string(field.size()));
    crypto::AesKey k{};
    std::copy(field.begin(), field.end(), k.begin());
    return map.unscramble(k);
}

const MappingRange* MappingInfo::find(std::string_view name) const
{
    for (const auto& r : ranges)
        if (r.name == name)
            return &r;
    return nullptr;
}

namespace {

std::string lower(std::string_view s)
{
    std::string out(s);
    for (auto& c : out)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

bool looks_like_range(const std::vector<std::string_view>& tok)
{
    if (tok.size() < 3 || tok[0].empty())
        return false;
    for (char c : tok[0])
        if (!std::isupper(static_cast<unsigned char>(c)) && !std::isdigit(static_cast<unsigned char>(c)))
            return false;
    return tok[1].size() > 1 && tok[1][0] == '0' && (tok[1][1] == 'x' || tok[1][1] == 'X');
}

std::uint32_t hex32(std::string_view s, std::size_t line)
{
    if (s.size() < 3 || s[0] != '0' || (s[1] != 'x' && s[1] != 'X'))
        throw ParseError(line, "expected 0x-prefixed hex, got '" + std::string(s) + "'");
    auto v = detail::parse_hex(s);
    if (!v || *v > 0xFFFFFFFFu)
        throw ParseError(line, "malformed hex '" + std::string(s) + "'");
    return static_cast<std::uint32_t>(*v);
}

std::optional<bool> on_off(std::string_view v)
{
    std::string l = lower(v);
    if (l == "on")
        return true;
    if (l == "off")
        return false;
    return std::nullopt;
}

} // namespace

MappingInfo parse_mapping(std::string_view text)
{
    MappingInfo info;
    const auto lines = detail::split_lines(text);
    for (std::size_t n = 0; n < lines.size(); ++n) {
        const std::size_t line_no = n + 1;
        const std::string_view line = detail::trim(lines[n]);
        if (line.empty())
            continue;
        const auto tok = detail::split_ws(line);

        if (looks_like_range(tok)) {
            MappingRange r;
            r.name = std::string(tok[0]);
            r.start = hex32(tok[1], line_no);
            r.end = hex32(tok[2], line_no);
            if (tok.size() >= 4) {
                std::string_view p = tok[3];
                if (p.size() < 3 || p.front() != '(' || p.back() != ')')
                    throw ParseError(line_no, "expected (0x...) after range");
                r.used_end = hex32(p.substr(1, p.size() - 2), line_no);
            }
            if (r.end < r.start)
                throw ParseError(line_no, "range " + r.name + " ends before it starts");
            if (!info.ranges.empty() && r.start <= info.ranges.back().end)
                throw ParseError(line_no, "range " + r.name + " overlaps or is out of order");
            info.ranges.push_back(std::move(r));
            continue;
        }

        static constexpr std::string_view kChecksum = "Data checksum for this conversion is ";
        if (line.starts_with(kChecksum)) {
            info.data_checksum = hex32(detail::trim(line.substr(kChecksum.size())), line_no);
            continue;
        }

        const auto colon = line.find(':');
        if (colon != std::string_view::npos) {
            const std::string key = lower(detail::trim(line.substr(0, colon)));
            const std::string_view value = detail::trim(line.substr(colon + 1));
            std::optional<bool>* flag = nullptr;
            if (key == "epof")
                flag = &info.epof;
            else if (key == "secured jtag")
                flag = &info.secured_jtag;
            else if (key == "verify protect")
                flag = &info.verify_protect;
            else if (key == "io pullup")
                flag = &info.io_pullup;
            else if (key == "spi io pullup")
                flag = &info.spi_io_pullup;
            if (flag) {
                auto v = on_off(value);
                if (!v)
                    throw ParseError(line_no, "expected ON or OFF for '" + key + "'");
                *flag = v;
                continue;
            }
            if (key == "watchdog value") {
                info.watchdog = std::string(value);
                continue;
            }
            if (key == "por") {
                info.por = std::string(value);
                continue;
            }
        }
        info.notes.emplace_back(line);
    }
    if (info.ranges.empty())
        throw ParseError(lines.size(), "missing required address ranges");
    return info;
}

namespace {

std::uint32_t le32(std::span<const std::uint8_t> s, std::size_t off)
{
    return std::uint32_t{s[off]} | std::uint32_t{s[off + 1]} << 8 | std::uint32_t{s[off + 2]} << 16
           | std::uint32_t{s[off + 3]} << 24;
}

void put_le32(std::vector<std::uint8_t>& v, std::size_t off, std::uint32_t x)
{
    for (int i = 0; i < 4; ++i)
        v[off + i] = static_cast<std::uint8_t>(x >> (8 * i));
}

std::uint32_t byte_sum(std::span<const std::uint8_t> s)
{
    return std::accumulate(s.begin(), s.end(), std::uint32_t{0},
                           [](std::uint32_t acc, std::uint8_t b) { return acc + b; });
}

} // namespace

SofReport analyze_sof(std::span<const std::uint8_t> sof)
{
    const std::size_t need = kSofHeaderBytes + 5;
    if (sof.size() < need)
        throw ImageTooShort(sof.size(), need);
    SofReport r;
    std::copy_n(sof.begin() + kSofUniqueIdOffset, 16, r.unique_id.begin());
    r.checksum_field = le32(sof, kSofChecksumOffset);
    r.trailing_crc = le32(sof, sof.size() - 4);
    const auto body = sof.subspan(kSofHeaderBytes, sof.size() - 4 - kSofHeaderBytes);
    r.body_bytes = body.size();
    r.computed_checksum = byte_sum(body);
    return r;
}

SofComparison compare_sof(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b)
{
    const SofReport ra = analyze_sof(a);
    const SofReport rb = analyze_sof(b);
    if (a.size() != b.size())
        throw LengthMismatch("SOF files differ in length");
    SofComparison c;
    c.unique_id_differs = ra.unique_id != rb.unique_id;
    c.checksum_differs = ra.checksum_field != rb.checksum_field;
    c.crc_differs = ra.trailing_crc != rb.trailing_crc;
    for (std::size_t i = 0; i < kSofHeaderBytes; ++i) {
        const bool in_id = i >= kSofUniqueIdOffset && i < kSofUniqueIdOffset + 16;
        const bool in_sum = i >= kSofChecksumOffset && i < kSofChecksumOffset + 4;
        if (!in_id && !in_sum && a[i] != b[i])
            ++c.metadata_byte_diffs;
    }
    for (std::size_t i = kSofHeaderBytes; i + 4 < a.size(); ++i)
        c.body_bit_diffs += static_cast<std::size_t>(std::popcount(static_cast<unsigned>(a[i] ^ b[i])));
    return c;
}

std::vector<std::uint8_t> synthesize_sof(std::span<const std::uint8_t> design)
{
    std::vector<std::uint8_t> out(kSofHeaderBytes, 0x00);
    static constexpr std::string_view kMagic = "SOF\x00\x01\x00MAX10";
    std::copy(kMagic.begin(), kMagic.end(), out.begin());
    for (std::size_t i = 0x20; i < kSofUniqueIdOffset; ++i)
        out[i] = static_cast<std::uint8_t>(i * 7);
    // Unique id: two 64-bit mixes of the design CRC.
    const std::uint32_t crc = crypto::crc32(design);
    const std::uint64_t lo = crypto::mix64(crc);
    const std::uint64_t hi = crypto::mix64(lo ^ design.size());
    for (int i = 0; i < 8; ++i) {
        out[kSofUniqueIdOffset + i] = static_cast<std::uint8_t>(lo >> (8 * i));
        out[kSofUniqueIdOffset + 8 + i] = static_cast<std::uint8_t>(hi >> (8 * i));
    }
    put_le32(out, kSofChecksumOffset, byte_sum(design));
    out.insert(out.end(), design.begin(), design.end());
    out.resize(out.size() + 4);
    put_le32(out, out.size() - 4, crypto::crc32({out.data(), out.size() - 4}));
    return out;
}

} // namespace maxsec::forensics
