#include "pvran/iqcore.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <tuple>

namespace pvran {

namespace {

constexpr std::uint64_t kBaseTxOffset = 30640;
constexpr std::uint64_t kBaseSubframe = 7680;

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
    T out{};
    const auto* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc{} || ptr != end) {
        throw ConfigError("bad value for '" + std::string(key) + "': " + std::string(value));
    }
    return out;
}

}  // namespace

std::array<std::byte, kBytesPerSample> serialize(IQSample s) {
    const auto i = static_cast<std::uint16_t>(s.i);
    const auto q = static_cast<std::uint16_t>(s.q);
    return {std::byte(i & 0xff), std::byte(i >> 8), std::byte(q & 0xff), std::byte(q >> 8)};
}

IQSample deserialize_sample(std::span<const std::byte, kBytesPerSample> b) {
    const auto i = static_cast<std::uint16_t>(std::to_integer<unsigned>(b[0]) |
                                              (std::to_integer<unsigned>(b[1]) << 8));
    const auto q = static_cast<std::uint16_t>(std::to_integer<unsigned>(b[2]) |
                                              (std::to_integer<unsigned>(b[3]) << 8));
    return {static_cast<std::int16_t>(i), static_cast<std::int16_t>(q)};
}

void samples_to_bytes(std::span<const IQSample> samples, std::span<std::byte> out) {
    if (out.size() != samples.size() * kBytesPerSample) {
        throw std::invalid_argument("samples_to_bytes: size mismatch");
    }
    if constexpr (std::endian::native == std::endian::little && sizeof(IQSample) == 4) {
        std::memcpy(out.data(), samples.data(), out.size());
    } else {
        for (std::size_t k = 0; k < samples.size(); ++k) {
            const auto b = serialize(samples[k]);
            std::memcpy(out.data() + 4 * k, b.data(), 4);
        }
    }
}

void bytes_to_samples(std::span<const std::byte> bytes, std::span<IQSample> out) {
    if (bytes.size() != out.size() * kBytesPerSample) {
        throw std::invalid_argument("bytes_to_samples: size mismatch");
    }
    if constexpr (std::endian::native == std::endian::little && sizeof(IQSample) == 4) {
        std::memcpy(out.data(), bytes.data(), bytes.size());
    } else {
        for (std::size_t k = 0; k < out.size(); ++k) {
            out[k] = deserialize_sample(bytes.subspan(4 * k).first<4>());
        }
    }
}

BandwidthProfile BandwidthProfile::from_prbs(int prbs) {
    if (prbs != 25 && prbs != 50 && prbs != 100) {
        throw ProfileError("unsupported PRB count " + std::to_string(prbs) + " (expected 25, 50 or 100)");
    }
    return BandwidthProfile(prbs);
}

std::uint64_t BandwidthProfile::samples_per_subframe() const {
    switch (prbs_) {
        case 25: return 7680;
        case 50: return 15360;
        case 100: return 30720;
    }
    throw ProfileError("unsupported PRB count " + std::to_string(prbs_));
}

std::uint64_t samples_per_subframe(const BandwidthProfile& profile) { return profile.samples_per_subframe(); }

std::uint64_t bytes_per_subframe(const BandwidthProfile& profile) {
    return kBytesPerSample * profile.samples_per_subframe();
}

std::uint64_t required_link_rate(const BandwidthProfile& profile) { return profile.sample_rate() * 32; }

std::uint64_t tx_offset(const BandwidthProfile& profile) {
    // Integer rounding of 30640 * spsf / 7680; exact for every supported profile.
    const std::uint64_t spsf = profile.samples_per_subframe();
    return (kBaseTxOffset * spsf + kBaseSubframe / 2) / kBaseSubframe;
}

SliceConfig parse_slice_config(std::string_view text) {
    SliceConfig cfg;
    bool have_id = false, have_dl = false, have_ul = false;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        }
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (key == "slice_id") {
            cfg.slice_id.value = parse_number<std::uint32_t>(key, value);
            have_id = true;
        } else if (key == "prbs") {
            cfg.profile = BandwidthProfile::from_prbs(parse_number<int>(key, value));
        } else if (key == "dl_freq_hz") {
            cfg.dl_freq_hz = parse_number<std::uint64_t>(key, value);
            have_dl = true;
        } else if (key == "ul_freq_hz") {
            cfg.ul_freq_hz = parse_number<std::uint64_t>(key, value);
            have_ul = true;
        } else if (key == "rx_gain_db") {
            cfg.rx_gain_db = parse_number<std::int32_t>(key, value);
        } else if (key == "tx_gain_db") {
            cfg.tx_gain_db = parse_number<std::int32_t>(key, value);
        } else if (key == "radio_channel") {
            cfg.radio_channel.index = parse_number<std::uint32_t>(key, value);
        } else if (key == "phy_profile") {
            cfg.phy_profile_name = std::string(value);
        } else if (key == "tx_offset") {
            cfg.tx_offset_override = parse_number<std::uint64_t>(key, value);
        } else {
            throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
        }
    }
    if (!have_id || !have_dl || !have_ul) {
        throw ConfigError("slice config requires slice_id, dl_freq_hz and ul_freq_hz");
    }
    return cfg;
}

SliceConfig load_slice_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open slice config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_slice_config(ss.str());
}

std::string format_slice_config(const SliceConfig& c) {
    std::ostringstream os;
    os << "slice_id = " << c.slice_id.value << '\n'
       << "prbs = " << c.profile.prbs() << '\n'
       << "dl_freq_hz = " << c.dl_freq_hz << '\n'
       << "ul_freq_hz = " << c.ul_freq_hz << '\n'
       << "rx_gain_db = " << c.rx_gain_db << '\n'
       << "tx_gain_db = " << c.tx_gain_db << '\n'
       << "radio_channel = " << c.radio_channel.index << '\n'
       << "phy_profile = " << c.phy_profile_name << '\n';
    if (c.tx_offset_override) os << "tx_offset = " << *c.tx_offset_override << '\n';
    return os.str();
}

Band Band::centered(std::uint64_t center_hz, std::uint64_t width_hz) {
    const std::uint64_t half = width_hz / 2;
    return {center_hz >= half ? center_hz - half : 0, center_hz + (width_hz - half)};
}

FdmEntry FdmPlan::entry_for(const SliceConfig& c) {
    const auto width = c.profile.sample_rate();
    return {c.slice_id, Band::centered(c.dl_freq_hz, width), Band::centered(c.ul_freq_hz, width), c.radio_channel};
}

FdmPlan FdmPlan::from_configs(std::span<const SliceConfig> configs) {
    FdmPlan plan;
    plan.entries.reserve(configs.size());
    for (const auto& c : configs) plan.entries.push_back(entry_for(c));
    return plan;
}

FdmVerdict validate_fdm_plan(const FdmPlan& plan) {
    FdmVerdict v;
    const auto& e = plan.entries;
    for (std::size_t a = 0; a < e.size(); ++a) {
        for (std::size_t b = a + 1; b < e.size(); ++b) {
            const SliceId lo = std::min(e[a].slice_id, e[b].slice_id);
            const SliceId hi = std::max(e[a].slice_id, e[b].slice_id);
            if (e[a].dl.overlaps(e[b].dl)) v.conflicts.push_back({lo, hi, ConflictKind::downlink});
            if (e[a].ul.overlaps(e[b].ul)) v.conflicts.push_back({lo, hi, ConflictKind::uplink});
            if (e[a].radio_channel == e[b].radio_channel) v.conflicts.push_back({lo, hi, ConflictKind::radio_channel});
        }
    }
    std::sort(v.conflicts.begin(), v.conflicts.end(), [](const FdmConflict& x, const FdmConflict& y) {
        return std::tie(x.first, x.second, x.kind) < std::tie(y.first, y.second, y.kind);
    });
    return v;
}

std::string to_string(ConflictKind kind) {
    switch (kind) {
        case ConflictKind::downlink: return "downlink";
        case ConflictKind::uplink: return "uplink";
        case ConflictKind::radio_channel: return "radio_channel";
    }
    return "unknown";
}

std::string FdmVerdict::describe() const {
    if (ok()) return "ok";
    std::string out;
    for (const auto& c : conflicts) {
        if (!out.empty()) out += "; ";
        out += to_string(c.kind) + " conflict between slice " + std::to_string(c.first.value) + " and slice " +
               std::to_string(c.second.value);
    }
    return out;
}

}  // namespace pvran
