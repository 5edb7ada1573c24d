// pvran: run the orchestrator, drive it over the request/reply port, and
// run the transport and streaming benchmarks.

#include "pvran/bench.hpp"
#include "pvran/orchestrator_net.hpp"

#include "CLI11.hpp"

#include <csignal>
#include <iostream>
#include <optional>

using namespace pvran;
using orchestrator::json;

namespace {

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

struct ClientFlags {
    std::string host = "127.0.0.1";
    std::optional<std::uint16_t> port;

    std::uint16_t resolve() const {
        return port.value_or(orchestrator::port_from_env("PVRAN_REQREP_PORT", orchestrator::kDefaultReqRepPort));
    }
};

void add_client_flags(CLI::App* app, ClientFlags& f) {
    app->add_option("--host", f.host, "Orchestrator host");
    app->add_option("--port", f.port, "Request/reply port (default $PVRAN_REQREP_PORT or 5555)");
}

int print_reply(const json& reply) {
    std::cout << reply.dump(2) << '\n';
    return reply.value("status", std::string()) == "ok" ? 0 : 2;
}

json body_from_config(const SliceConfig& c) {
    json body = {{"slice_id", c.slice_id.value},   {"phy_profile", c.phy_profile_name}, {"prbs", c.profile.prbs()},
                 {"dl_freq_hz", c.dl_freq_hz},     {"ul_freq_hz", c.ul_freq_hz},         {"rx_gain_db", c.rx_gain_db},
                 {"tx_gain_db", c.tx_gain_db},     {"radio_channel", c.radio_channel.index}};
    if (c.tx_offset_override) body["tx_offset"] = *c.tx_offset_override;
    return body;
}

void print_summary(const std::vector<json>& records) {
    const auto text = bench::format_report(records, "-");
    for (std::size_t at = 0, nl; (nl = text.find('\n', at)) != std::string::npos; at = nl + 1) {
        if (text.compare(at, 2, "# ") == 0) std::cout << text.substr(at, nl - at + 1);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pvran: paravirtualized RAN front-end on a simulated radio"};
    app.require_subcommand(1);

    // serve
    auto* serve = app.add_subcommand("serve", "Run the orchestrator with its TCP and HTTP front doors");
    std::string bind = "127.0.0.1";
    std::optional<std::uint16_t> reqrep_port, http_port;
    bool fast_clock = false;
    std::size_t channels = 4;
    double snr_db = 0;
    serve->add_option("--bind", bind, "Bind address");
    serve->add_option("--reqrep-port", reqrep_port, "Request/reply port (default $PVRAN_REQREP_PORT or 5555)");
    serve->add_option("--http-port", http_port, "HTTP port (default $PVRAN_HTTP_PORT or 8080)");
    serve->add_flag("--fast-clock", fast_clock, "Run the radio unpaced");
    serve->add_option("--channels", channels, "Radio channels")->check(CLI::Range(1, 64));
    auto* snr_opt = serve->add_option("--snr-db", snr_db, "AWGN on every UE link");

    // slice
    auto* slice = app.add_subcommand("slice", "Manage slices on a running orchestrator");
    slice->require_subcommand(1);
    ClientFlags client;
    auto* create = slice->add_subcommand("create", "Create a slice from a config file");
    std::string config_path;
    create->add_option("--config", config_path, "key = value slice config")->required()->check(CLI::ExistingFile);
    add_client_flags(create, client);
    auto* destroy = slice->add_subcommand("destroy", "Destroy a slice");
    std::uint32_t slice_id = 0;
    destroy->add_option("id", slice_id, "Slice id")->required();
    add_client_flags(destroy, client);
    auto* list = slice->add_subcommand("list", "List slices");
    add_client_flags(list, client);
    auto* band = slice->add_subcommand("set-band", "Move a slice to new DL/UL centers (restarts it)");
    std::uint64_t dl = 0, ul = 0;
    band->add_option("id", slice_id, "Slice id")->required();
    band->add_option("--dl", dl, "Downlink center, Hz")->required();
    band->add_option("--ul", ul, "Uplink center, Hz")->required();
    add_client_flags(band, client);

    auto* metrics = app.add_subcommand("metrics", "Print the current metrics snapshot");
    add_client_flags(metrics, client);

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "Transport and streaming measurements");
    bench_cmd->require_subcommand(1);
    std::string report_path;
    bench_cmd->add_option("--report", report_path, "Also write a report file here");
    bench::LatencyOptions lat;
    auto* latency = bench_cmd->add_subcommand("latency", "One-way latency of one transport");
    std::string transport = "shm";
    latency->add_option("--transport", transport, "shm | pubsub")->check(CLI::IsMember({"shm", "pubsub"}));
    latency->add_option("--bytes", lat.msg_bytes, "Message size");
    latency->add_option("--iters", lat.iters, "Measured iterations (>= 1000)");
    latency->add_option("--warmup", lat.warmup, "Discarded iterations");
    auto* compare = bench_cmd->add_subcommand("compare", "shm vs pub-sub one-way latency");
    int runs = 1;
    compare->add_option("--bytes", lat.msg_bytes, "Message size");
    compare->add_option("--iters", lat.iters, "Measured iterations (>= 1000)");
    compare->add_option("--warmup", lat.warmup, "Discarded iterations");
    compare->add_option("--runs", runs, "Repetitions")->check(CLI::PositiveNumber);
    auto* capacity = bench_cmd->add_subcommand("capacity", "Slice-count bound per transport");
    int prbs = 25;
    capacity->add_option("--prbs", prbs, "25 | 50 | 100")->check(CLI::IsMember({25, 50, 100}));
    capacity->add_option("--iters", lat.iters, "Measured iterations (>= 1000)");
    auto* stream = bench_cmd->add_subcommand("stream", "Sustained paced streaming through the full pipeline");
    bench::StreamOptions so;
    stream->add_option("--prbs", prbs, "25 | 50 | 100")->check(CLI::IsMember({25, 50, 100}));
    stream->add_option("--seconds", so.seconds, "Duration")->check(CLI::PositiveNumber);
    bool stream_fast = false;
    stream->add_flag("--fast-clock", stream_fast, "Unpaced radio (rate limited by CPU only)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*serve) {
            orchestrator::OrchestratorOptions o;
            o.radio.fast_clock = fast_clock;
            o.radio.channels = channels;
            if (snr_opt->count()) o.ue_link.snr_db = snr_db;
            const auto rr = reqrep_port.value_or(
                orchestrator::port_from_env("PVRAN_REQREP_PORT", orchestrator::kDefaultReqRepPort));
            const auto hp =
                http_port.value_or(orchestrator::port_from_env("PVRAN_HTTP_PORT", orchestrator::kDefaultHttpPort));
            orchestrator::Orchestrator core(o);
            orchestrator::ReqRepServer reqrep(core, bind, rr);
            orchestrator::HttpGateway http(core, bind, hp);
            std::cout << "request/reply on " << bind << ':' << reqrep.port() << ", http on " << bind << ':'
                      << http.port() << std::endl;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
            std::cout << "shutting down" << std::endl;
            return 0;
        }
        if (*slice || *metrics) {
            orchestrator::ReqRepClient c(client.host, client.resolve());
            using orchestrator::Verb;
            if (*create) return print_reply(c.call(Verb::create, body_from_config(load_slice_config(config_path))));
            if (*destroy) return print_reply(c.call(Verb::destroy, {{"slice_id", slice_id}}));
            if (*list) return print_reply(c.call(Verb::list));
            if (*band) {
                return print_reply(c.call(Verb::set_band, {{"slice_id", slice_id}, {"dl_freq_hz", dl}, {"ul_freq_hz", ul}}));
            }
            return print_reply(c.call(Verb::metrics));
        }

        std::vector<json> records;
        auto add = [&](const json& r) {
            std::cout << r.dump() << '\n';
            records.push_back(r);
        };
        if (*latency) {
            const auto kind = bench::transport_from_string(transport);
            add(bench::to_json(kind, bench::latency_oneway(kind, lat)));
        } else if (*compare) {
            for (int k = 0; k < runs; ++k) add(bench::to_json(bench::compare_transports(lat)));
        } else if (*capacity) {
            const auto profile = BandwidthProfile::from_prbs(prbs);
            lat.msg_bytes = bytes_per_subframe(profile);
            for (auto kind : {bench::TransportKind::shm_vchan, bench::TransportKind::pubsub_socket}) {
                const auto stats = bench::latency_oneway(kind, lat);
                add(bench::to_json(kind, stats));
                add(bench::to_json(bench::capacity_estimate(profile, kind, stats)));
            }
        } else if (*stream) {
            so.profile = BandwidthProfile::from_prbs(prbs);
            so.paced = !stream_fast;
            add(bench::to_json(bench::sustained_stream_test(so)));
        }
        print_summary(records);
        if (!report_path.empty()) {
            bench::emit_report(records, report_path);
            std::cout << "report written to " << report_path << '\n';
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "pvran: " << e.what() << '\n';
        return 1;
    }
}
