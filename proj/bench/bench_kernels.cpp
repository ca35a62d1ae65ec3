#include "maxsec/bitstream.hpp"
#include "maxsec/fault.hpp"

#include <benchmark/benchmark.h>

#include <memory>

using namespace maxsec;

namespace {

fault::DeviceFactory factory(const std::string& profile, const device::FuseSet& fuses)
{
    const DeviceProfile p = *builtin_profile(profile);
    auto proto = std::make_shared<const device::Device>(p, device::build_image(p, fuses, 7));
    return [proto](std::uint64_t) { return *proto; };
}

fault::CampaignSpec campaign_spec(std::uint64_t trials)
{
    fault::CampaignSpec s;
    s.device = "10M16SCE144";
    s.params = {fault::GlitchKind::PowerGlitch, 1.4, 4.0, std::nullopt, 0.0};
    s.trials = trials;
    s.seed = 11;
    return s;
}

void BM_CampaignSerial(benchmark::State& st)
{
    const auto f = factory("10m16", {});
    const auto spec = campaign_spec(static_cast<std::uint64_t>(st.range(0)));
    for (auto _ : st)
        benchmark::DoNotOptimize(fault::run_campaign_serial(spec, fault::CalibrationTable::builtin(), f));
}

void BM_CampaignParallel(benchmark::State& st)
{
    const auto f = factory("10m16", {});
    const auto spec = campaign_spec(static_cast<std::uint64_t>(st.range(0)));
    for (auto _ : st)
        benchmark::DoNotOptimize(fault::run_campaign(spec, fault::CalibrationTable::builtin(), f));
}

const fault::Grid kGrid{1500, 1900, 3100, 3100, 50};
const fault::LaserPulse kPulse{50.0, 20.0, -20.0};

void BM_LaserGridSerial(benchmark::State& st)
{
    const auto f = factory("10m08", device::FuseSet::from_bits(1));
    const auto plan = fault::Floorplan::default_max10();
    for (auto _ : st)
        benchmark::DoNotOptimize(fault::laser_scan_serial(kGrid, kPulse, f, plan));
}

void BM_LaserGridParallel(benchmark::State& st)
{
    const auto f = factory("10m08", device::FuseSet::from_bits(1));
    const auto plan = fault::Floorplan::default_max10();
    for (auto _ : st)
        benchmark::DoNotOptimize(fault::laser_scan(kGrid, kPulse, f, plan));
}

const fault::Axis kX{0.0, 1.0, 30};
const fault::Axis kY{0.0, 1.0, 30};

void BM_TimingGridSerial(benchmark::State& st)
{
    const auto f = factory("10m08", device::FuseSet::from_bits(4));
    const auto plan = fault::Floorplan::default_max10();
    for (auto _ : st)
        benchmark::DoNotOptimize(
            fault::timing_sweep_serial(fault::SweepKind::Overshoot, kX, kY, 50.0, {2300, 2500}, f, plan));
}

void BM_TimingGridParallel(benchmark::State& st)
{
    const auto f = factory("10m08", device::FuseSet::from_bits(4));
    const auto plan = fault::Floorplan::default_max10();
    for (auto _ : st)
        benchmark::DoNotOptimize(
            fault::timing_sweep(fault::SweepKind::Overshoot, kX, kY, 50.0, {2300, 2500}, f, plan));
}

} // namespace

BENCHMARK(BM_CampaignSerial)->Arg(2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CampaignParallel)->Arg(2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LaserGridSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LaserGridParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TimingGridSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TimingGridParallel)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
