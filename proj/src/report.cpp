#include "maxsec/report.hpp"

#include "maxsec/target.hpp"

#include <fmt/format.h>

namespace maxsec::report {

std::string hex(std::uint64_t v, int digits)
{
    return fmt::format("0x{:0{}X}", v, digits);
}

Json survey(const std::vector<scan::IrSurveyEntry>& entries, std::uint32_t ir_width)
{
    const int digits = static_cast<int>((ir_width + 3) / 4);
    Json list = Json::array();
    Json undocumented = Json::array();
    std::map<std::string, std::size_t> counts;
    for (const auto& e : entries) {
        Json j;
        j["opcode"] = hex(e.opcode, digits);
        j["dr_length"] = e.dr_length ? Json(*e.dr_length) : Json(nullptr);
        j["class"] = std::string(scan::ir_class_name(e.classification));
        j["name"] = e.name;
        list.push_back(std::move(j));
        ++counts[std::string(scan::ir_class_name(e.classification))];
        if (e.classification == scan::IrClass::Undocumented)
            undocumented.push_back(hex(e.opcode, digits));
    }
    return {{"entries", list}, {"undocumented", undocumented}, {"counts", counts}, {"visited", entries.size()}};
}

Json regions(const std::vector<scan::ProbedRegion>& rs)
{
    Json list = Json::array();
    for (const auto& r : rs)
        list.push_back({{"start", hex(r.start, 5)},
                        {"end", hex(r.end, 5)},
                        {"class", std::string(scan::observed_class_name(r.observed))},
                        {"sector", r.sector}});
    return {{"regions", list}};
}

Json fuse_set(const device::FuseSet& f)
{
    Json j = {{"verify_protect", f.verify_protect},
              {"encrypted_pof_only", f.encrypted_pof_only},
              {"jtag_secure", f.jtag_secure}};
    if (f.aes_key)
        j["aes_key"] = key_hex(*f.aes_key);
    return j;
}

Json fuse_inference(const scan::FuseInference& inf)
{
    Json c = Json::array();
    for (const auto& f : inf.candidates)
        c.push_back(fuse_set(f));
    return {{"candidates", c}, {"evidence", inf.evidence}};
}

Json remanence(const scan::RemanenceResult& r)
{
    return {{"programmed_bits", r.programmed_bits},
            {"recovered_bits", r.recovered_bits},
            {"fraction", r.fraction}};
}

Json fuse_report(const forensics::FuseReport& r)
{
    Json fuses = Json::array();
    for (const auto& d : r.fuses)
        fuses.push_back({{"name", d.name},
                         {"marker_offset", hex(d.marker_offset, 4)},
                         {"ctrl_offset", hex(d.ctrl_offset, 6)},
                         {"tail_offset", hex(d.tail_offset, 6)}});
    Json anomalies = Json::array();
    for (const auto& a : r.anomalies)
        anomalies.push_back({{"name", a.name}, {"offset", hex(a.offset, 6)}, {"detail", a.detail}});
    Json j = {{"fuses", fuses}, {"anomalies", anomalies}};
    if (r.key_field)
        j["key_field"] = key_hex(*r.key_field);
    if (r.key) {
        j["key"] = key_hex(*r.key);
        j["key_model"] = std::string(kKeyModel);
    }
    return j;
}

Json byte_diffs(const std::vector<forensics::ByteDiff>& diffs)
{
    Json list = Json::array();
    for (const auto& d : diffs) {
        Json j = {{"offset", hex(d.offset, 6)}, {"a", hex(d.a, 2)}, {"b", hex(d.b, 2)}};
        j["region"] = d.region ? Json(std::string(access_class_name(*d.region))) : Json(nullptr);
        list.push_back(std::move(j));
    }
    return {{"count", diffs.size()}, {"diffs", list}};
}

Json sof(const forensics::SofReport& r)
{
    std::string id;
    for (auto b : r.unique_id)
        id += fmt::format("{:02X}", b);
    return {{"unique_id", id},
            {"checksum_field", hex(r.checksum_field, 8)},
            {"computed_checksum", hex(r.computed_checksum, 8)},
            {"checksum_matches", r.checksum_matches()},
            {"trailing_crc", hex(r.trailing_crc, 8)},
            {"body_bytes", r.body_bytes}};
}

Json sof_comparison(const forensics::SofComparison& c)
{
    return {{"unique_id_differs", c.unique_id_differs},
            {"checksum_differs", c.checksum_differs},
            {"crc_differs", c.crc_differs},
            {"body_bit_diffs", c.body_bit_diffs},
            {"metadata_byte_diffs", c.metadata_byte_diffs},
            {"design_only", c.design_only()}};
}

Json mapping(const forensics::MappingInfo& m)
{
    Json ranges = Json::array();
    for (const auto& r : m.ranges) {
        Json j = {{"name", r.name}, {"start", hex(r.start, 8)}, {"end", hex(r.end, 8)}};
        if (r.used_end)
            j["used_end"] = hex(*r.used_end, 8);
        ranges.push_back(std::move(j));
    }
    Json j = {{"ranges", ranges}, {"notes", m.notes}};
    auto flag = [&](const char* key, const std::optional<bool>& v) {
        j[key] = v ? Json(*v) : Json(nullptr);
    };
    flag("epof", m.epof);
    flag("secured_jtag", m.secured_jtag);
    flag("verify_protect", m.verify_protect);
    flag("io_pullup", m.io_pullup);
    flag("spi_io_pullup", m.spi_io_pullup);
    j["watchdog"] = m.watchdog ? Json(*m.watchdog) : Json(nullptr);
    j["por"] = m.por ? Json(*m.por) : Json(nullptr);
    j["data_checksum"] = m.data_checksum ? Json(hex(*m.data_checksum, 8)) : Json(nullptr);
    return j;
}

Json campaign(const fault::CampaignResult& r)
{
    Json trials = Json::array();
    for (const auto& t : r.trials)
        trials.push_back({{"index", t.index},
                          {"seed", t.seed},
                          {"reads", t.reads},
                          {"corrupt", t.corrupt},
                          {"resets", t.resets}});
    return {{"corrupt_count", r.corrupt_count},
            {"reset_count", r.reset_count},
            {"p_corrupt", r.outcome.p_corrupt},
            {"p_reset", r.outcome.p_reset},
            {"trials", trials}};
}

Json segments(const std::vector<trace::Segment>& segs)
{
    Json list = Json::array();
    for (const auto& s : segs)
        list.push_back({{"phase", std::string(trace::phase_name(s.phase))}, {"start", s.start}, {"end", s.end}});
    return {{"segments", list}};
}

Json trace_diff(const trace::TraceDiff& d)
{
    Json list = Json::array();
    for (const auto& w : d.windows)
        list.push_back({{"start", w.start}, {"end", w.end}, {"peak", w.peak}});
    return {{"samples", d.diff.size()}, {"windows", list}};
}

std::string dump(const Json& j)
{
    return j.dump(2) + "\n";
}

} // namespace maxsec::report
