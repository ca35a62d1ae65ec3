#pragma once

#include "maxsec/fault.hpp"
#include "maxsec/forensics.hpp"
#include "maxsec/pof.hpp"
#include "maxsec/scanner.hpp"
#include "maxsec/trace.hpp"

#include <json.hpp>

#include <string>

// Canonical JSON renderings of analysis results. Objects keep keys sorted, so dump() output
// is stable for golden comparisons.
namespace maxsec::report {

using Json = nlohmann::json;

// Attached to every unscrambled key: the permutation is an interpretation of observed fields.
inline constexpr std::string_view kKeyModel = "16-position nibble permutation applied to each 8-byte half";

std::string hex(std::uint64_t v, int digits);

Json survey(const std::vector<scan::IrSurveyEntry>& entries, std::uint32_t ir_width);
Json regions(const std::vector<scan::ProbedRegion>& regions);
Json fuse_inference(const scan::FuseInference& inf);
Json fuse_set(const device::FuseSet& f);
Json remanence(const scan::RemanenceResult& r);
Json fuse_report(const forensics::FuseReport& r);
Json byte_diffs(const std::vector<forensics::ByteDiff>& diffs);
Json sof(const forensics::SofReport& r);
Json sof_comparison(const forensics::SofComparison& c);
Json mapping(const forensics::MappingInfo& m);
Json campaign(const fault::CampaignResult& r);
Json segments(const std::vector<trace::Segment>& segs);
Json trace_diff(const trace::TraceDiff& d);

// Two-space indented dump with a trailing newline.
std::string dump(const Json& j);

} // namespace maxsec::report
