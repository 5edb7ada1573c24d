#include "doctest.h"
#include "pvran/iqcore.hpp"

#include <algorithm>
#include <random>

using namespace pvran;

namespace {

SliceConfig slice(std::uint32_t id, std::uint64_t dl, std::uint64_t ul, std::uint32_t channel, int prbs = 25) {
    SliceConfig c;
    c.slice_id = {id};
    c.profile = BandwidthProfile::from_prbs(prbs);
    c.dl_freq_hz = dl;
    c.ul_freq_hz = ul;
    c.radio_channel = {channel};
    return c;
}

}  // namespace

TEST_CASE("subframe sizes per profile") {
    CHECK(samples_per_subframe(BandwidthProfile::from_prbs(25)) == 7680);
    // 15.36 Msps and 30.72 Msps over 1 ms
    CHECK(samples_per_subframe(BandwidthProfile::from_prbs(50)) == 15360);
    CHECK(samples_per_subframe(BandwidthProfile::from_prbs(100)) == 30720);

    CHECK(bytes_per_subframe(BandwidthProfile::from_prbs(25)) == 30720);
    CHECK(bytes_per_subframe(BandwidthProfile::from_prbs(50)) == 61440);
    CHECK(bytes_per_subframe(BandwidthProfile::from_prbs(100)) == 122880);
}

TEST_CASE("unsupported PRB counts are rejected") {
    CHECK_THROWS_AS(BandwidthProfile::from_prbs(6), ProfileError);
    CHECK_THROWS_AS(BandwidthProfile::from_prbs(75), ProfileError);
    CHECK_THROWS_AS(BandwidthProfile::from_prbs(0), ProfileError);
}

TEST_CASE("fronthaul link rate") {
    CHECK(required_link_rate(BandwidthProfile::from_prbs(25)) == 245'760'000);
    CHECK(required_link_rate(BandwidthProfile::from_prbs(50)) == 491'520'000);
    CHECK(required_link_rate(BandwidthProfile::from_prbs(100)) == 983'040'000);
}

TEST_CASE("tx offset scales with sample rate") {
    CHECK(tx_offset(BandwidthProfile::from_prbs(25)) == 30640);
    CHECK(tx_offset(BandwidthProfile::from_prbs(50)) == 61280);
    CHECK(tx_offset(BandwidthProfile::from_prbs(100)) == 122560);

    SliceConfig c = slice(1, 595'000'000, 545'000'000, 0);
    CHECK(c.effective_tx_offset() == 30640);
    c.tx_offset_override = 12345;
    CHECK(c.effective_tx_offset() == 12345);
}

TEST_CASE("profile arithmetic invariants") {
    for (int prbs : {25, 50, 100}) {
        const auto p = BandwidthProfile::from_prbs(prbs);
        CHECK(bytes_per_subframe(p) == 4 * samples_per_subframe(p));
        CHECK(required_link_rate(p) == 32000 * samples_per_subframe(p));
        CHECK(p.sample_rate() == 1000 * samples_per_subframe(p));
    }
}

TEST_CASE("sample serialization is I then Q, little-endian") {
    const auto b = serialize(IQSample{0x1234, -2});
    CHECK(b[0] == std::byte{0x34});
    CHECK(b[1] == std::byte{0x12});
    CHECK(b[2] == std::byte{0xfe});
    CHECK(b[3] == std::byte{0xff});
}

TEST_CASE("sample round trip: corners and random values") {
    std::vector<IQSample> values = {{0, 0}, {32767, 32767}, {-32768, -32768}, {-32768, 32767}, {32767, -32768}};
    std::mt19937 rng(7);
    std::uniform_int_distribution<int> dist(-32768, 32767);
    for (int k = 0; k < 100000; ++k) {
        values.push_back({static_cast<std::int16_t>(dist(rng)), static_cast<std::int16_t>(dist(rng))});
    }
    for (const auto& v : values) {
        const auto bytes = serialize(v);
        REQUIRE(deserialize_sample(bytes) == v);
    }
    std::vector<std::byte> wire(values.size() * 4);
    samples_to_bytes(values, wire);
    std::vector<IQSample> back(values.size());
    bytes_to_samples(wire, back);
    CHECK(back == values);
    for (std::size_t k = 0; k < 16; ++k) {
        const auto b = serialize(values[k]);
        CHECK(std::equal(b.begin(), b.end(), wire.begin() + 4 * k));
    }
}

TEST_CASE("fdm plan: two slices 15 MHz apart are disjoint") {
    std::vector<SliceConfig> cfgs = {slice(1, 595'000'000, 545'000'000, 0), slice(2, 580'000'000, 530'000'000, 1)};
    CHECK(validate_fdm_plan(FdmPlan::from_configs(cfgs)).ok());
}

TEST_CASE("fdm plan: single slice is ok") {
    std::vector<SliceConfig> cfgs = {slice(1, 595'000'000, 545'000'000, 0)};
    CHECK(validate_fdm_plan(FdmPlan::from_configs(cfgs)).ok());
}

TEST_CASE("fdm plan: identical downlink bands conflict") {
    std::vector<SliceConfig> cfgs = {slice(1, 595'000'000, 545'000'000, 0), slice(2, 595'000'000, 530'000'000, 1)};
    const auto v = validate_fdm_plan(FdmPlan::from_configs(cfgs));
    REQUIRE(v.conflicts.size() == 1);
    CHECK(v.conflicts[0] == FdmConflict{{1}, {2}, ConflictKind::downlink});
    CHECK(v.describe().find("slice 1") != std::string::npos);
}

TEST_CASE("fdm plan: band edges are center +/- sample_rate/2") {
    // 25 PRB occupies +/-3.84 MHz: 7.68 MHz spacing touches, anything less overlaps.
    std::vector<SliceConfig> touching = {slice(1, 600'000'000, 500'000'000, 0), slice(2, 607'680'000, 520'000'000, 1)};
    CHECK(validate_fdm_plan(FdmPlan::from_configs(touching)).ok());
    std::vector<SliceConfig> overlapping = {slice(1, 600'000'000, 500'000'000, 0),
                                            slice(2, 607'679'999, 520'000'000, 1)};
    CHECK_FALSE(validate_fdm_plan(FdmPlan::from_configs(overlapping)).ok());
}

TEST_CASE("fdm plan: uplink and radio channel conflicts are reported per pair") {
    std::vector<SliceConfig> cfgs = {slice(1, 595'000'000, 545'000'000, 0), slice(2, 580'000'000, 545'000'000, 0),
                                     slice(3, 565'000'000, 515'000'000, 1)};
    const auto v = validate_fdm_plan(FdmPlan::from_configs(cfgs));
    REQUIRE(v.conflicts.size() == 2);
    CHECK(v.conflicts[0] == FdmConflict{{1}, {2}, ConflictKind::uplink});
    CHECK(v.conflicts[1] == FdmConflict{{1}, {2}, ConflictKind::radio_channel});
}

TEST_CASE("fdm verdict is invariant under permutation") {
    std::mt19937 rng(11);
    std::uniform_int_distribution<int> freq(0, 40);
    std::uniform_int_distribution<int> chan(0, 5);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<SliceConfig> cfgs;
        const int n = 2 + trial % 5;
        for (int k = 0; k < n; ++k) {
            cfgs.push_back(slice(static_cast<std::uint32_t>(k + 1), 500'000'000ull + 2'000'000ull * freq(rng),
                                 1'000'000'000ull + 2'000'000ull * freq(rng), static_cast<std::uint32_t>(chan(rng))));
        }
        const auto base = validate_fdm_plan(FdmPlan::from_configs(cfgs));
        std::shuffle(cfgs.begin(), cfgs.end(), rng);
        const auto shuffled = validate_fdm_plan(FdmPlan::from_configs(cfgs));
        REQUIRE(base.ok() == shuffled.ok());
        REQUIRE(base.conflicts == shuffled.conflicts);
    }
}

TEST_CASE("slice config text round trip") {
    SliceConfig c = slice(7, 2'685'000'000, 2'565'000'000, 1, 50);
    c.rx_gain_db = 20;
    c.tx_gain_db = -3;
    c.phy_profile_name = "phy-b";
    c.tx_offset_override = 61000;
    CHECK(parse_slice_config(format_slice_config(c)) == c);

    const auto parsed = parse_slice_config("# slice one\nslice_id = 1\n dl_freq_hz=595000000\nul_freq_hz = 545000000\n");
    CHECK(parsed.slice_id.value == 1);
    CHECK(parsed.profile.prbs() == 25);
    CHECK(parsed.phy_profile_name == "phy-a");
}

TEST_CASE("slice config errors") {
    CHECK_THROWS_AS(parse_slice_config("slice_id = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_slice_config("slice_id = x\ndl_freq_hz = 1\nul_freq_hz = 2\n"), ConfigError);
    CHECK_THROWS_AS(parse_slice_config("slice_id = 1\ndl_freq_hz = 1\nul_freq_hz = 2\ncolor = red\n"), ConfigError);
    CHECK_THROWS_AS(parse_slice_config("slice_id = 1\ndl_freq_hz = 1\nul_freq_hz = 2\nprbs = 75\n"), ProfileError);
}
