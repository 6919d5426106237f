// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <string>
#include <sys/wait.h>

#include "packet_builder.hpp"
#include "scratch.hpp"
#include "traffic/dataset.hpp"
#include "traffic/pcap.hpp"

using namespace netmamba;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::string& args, const scratch::TempDir& tmp, const std::string& env = "") {
  const auto out = tmp.path / "stdout.txt";
  const auto err = tmp.path / "stderr.txt";
  const std::string cmd = env + " " NETMAMBA_CLI " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return {WEXITSTATUS(status), scratch::read_text(out), scratch::read_text(err)};
}

const char* kSmallConfig =
    "repr.packets_per_flow = 2\n"
    "repr.header_bytes = 40\n"
    "repr.payload_bytes = 24\n"
    "model.d_enc = 16\n"
    "model.e_enc = 32\n"
    "model.depth_enc = 1\n"
    "model.d_dec = 8\n"
    "model.e_dec = 16\n"
    "model.depth_dec = 1\n"
    "model.d_state = 4\n"
    "model.dt_rank = 4\n"
    "finetune.batch = 16\n"
    "seed = 5\n";

/// Two classes x 12 captures, three TCP packets each plus one ARP frame.
void write_fixture_dir(const std::filesystem::path& root) {
  for (int c = 0; c < 2; ++c) {
    for (int f = 0; f < 12; ++f) {
      std::vector<traffic::RawPacket> pkts;
      for (int k = 0; k < 3; ++k) {
        const auto ip = fixture::ipv4({10, 0, std::uint8_t(c), 1}, {10, 0, 0, 2}, 6,
                                      fixture::tcp(std::uint16_t(2000 + f), std::uint16_t(80 + c), fixture::filler(16 + k)));
        pkts.push_back(fixture::frame(fixture::ethernet(0x0800, ip), k));
      }
      pkts.push_back(fixture::frame(fixture::arp(), 5));
      scratch::write_file(root / (c ? "stream" : "chat") / ("c" + std::to_string(f) + ".pcap"),
                          traffic::write_capture(pkts));
    }
  }
}

}  // namespace

TEST_CASE("cli: usage errors exit with 2") {
  scratch::TempDir tmp("cli_usage");
  auto r = run("extract --input " + (tmp.path / "missing").string() + " --output " + (tmp.path / "o").string(), tmp);
  CHECK(r.code == 2);
  CHECK(r.err.find("does not exist") != std::string::npos);

  CHECK(run("", tmp).code == 2);
  CHECK(run("frobnicate", tmp).code == 2);
  CHECK(run("pretrain --data", tmp).code == 2);
  CHECK(run("config --set no.such.key=1", tmp).code == 2);
  CHECK(run("config --set pretrain.batch=abc", tmp).code == 2);
  CHECK(run("--help", tmp).code == 0);

  scratch::write_text(tmp.path / "d" / "train.nmstride", "");
  r = run("finetune --data " + (tmp.path / "d").string() + " --out " + (tmp.path / "f").string(), tmp);
  CHECK(r.code == 2);
  CHECK(r.err.find("--from-scratch") != std::string::npos);
}

TEST_CASE("cli: config precedence flag > file > default") {
  scratch::TempDir tmp("cli_config");
  scratch::write_text(tmp.path / "run.conf", "pretrain.batch = 32\npretrain.lr = 0.0005\n");
  const auto r = run("config --config " + (tmp.path / "run.conf").string() + " --set pretrain.batch=8", tmp);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("pretrain.batch = 8\n") != std::string::npos);
  CHECK(r.out.find("pretrain.lr = 0.0005\n") != std::string::npos);
  CHECK(r.out.find("pretrain.steps = 150000\n") != std::string::npos);

  const auto params = run("params --classes 20", tmp, "NETMAMBA_THREADS=1");
  CHECK(params.code == 0);
  CHECK(params.out == "pretrain 2180100\nfinetune 1925140\n");
}

TEST_CASE("cli: extract is deterministic and honors --no-header") {
  scratch::TempDir tmp("cli_extract");
  write_fixture_dir(tmp.path / "in");
  const std::string in = (tmp.path / "in").string();
  REQUIRE(run("extract --input " + in + " --output " + (tmp.path / "a").string() + " --seed 3", tmp).code == 0);
  const auto r = run("extract --input " + in + " --output " + (tmp.path / "b").string() + " --seed 3", tmp);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("\"malformed_packets\"") != std::string::npos);
  for (const char* f : {"train.nmstride", "val.nmstride", "test.nmstride", "manifest.json", "summary.json"})
    CHECK(scratch::read_file(tmp.path / "a" / f) == scratch::read_file(tmp.path / "b" / f));

  REQUIRE(run("extract --no-header --input " + in + " --output " + (tmp.path / "nh").string(), tmp).code == 0);
  const auto nh = traffic::read_sample_set(tmp.path / "nh" / "train.nmstride");
  REQUIRE(nh.size() > 0);
  std::size_t nonzero_header = 0, nonzero_payload = 0;
  for (std::size_t i = 0; i < nh.size(); ++i)
    for (std::size_t p = 0; p < nh.packets_per_flow; ++p)
      for (std::size_t b = 0; b < nh.header_bytes + nh.payload_bytes; ++b) {
        const auto v = nh.sample(i)[p * (nh.header_bytes + nh.payload_bytes) + b];
        (b < nh.header_bytes ? nonzero_header : nonzero_payload) += v != 0;
      }
  CHECK(nonzero_header == 0);
  CHECK(nonzero_payload > 0);

  CHECK(run("extract --no-header --no-payload --input " + in + " --output " + (tmp.path / "x").string(), tmp).code == 2);
  CHECK(run("extract --min-packets 9 --input " + in + " --output " + (tmp.path / "y").string(), tmp).code == 2);
}

TEST_CASE("cli: pretrain, finetune, evaluate") {
  scratch::TempDir tmp("cli_train");
  const auto conf = tmp.path / "small.conf";
  scratch::write_text(conf, kSmallConfig);
  const std::string c = " --config " + conf.string();
  const std::string data = (tmp.path / "data").string();
  REQUIRE(run("synth" + c + " --classes 3 --per-class 40 --output " + data, tmp).code == 0);

  auto r = run("pretrain" + c + " --steps 500 --batch 32 --log-every 50 --data " + data + "/train.nmstride --out " +
                   (tmp.path / "pt").string(),
               tmp);
  REQUIRE(r.code == 0);
  const std::string log = scratch::read_text(tmp.path / "pt" / "loss_log.csv");
  CHECK(log.rfind("step,loss,lr\n", 0) == 0);
  int rows = 0;
  for (char ch : log) rows += ch == '\n';
  CHECK(rows == 11);
  CHECK(std::filesystem::exists(tmp.path / "pt" / "pretrain_best.ckpt"));
  const std::string ckpt = (tmp.path / "pt" / "pretrain_last.ckpt").string();

  r = run("finetune" + c + " --epochs 3 --init " + ckpt + " --data " + data + " --out " + (tmp.path / "ft").string(), tmp);
  REQUIRE(r.code == 0);
  CHECK(std::filesystem::exists(tmp.path / "ft" / "metrics.json"));
  r = run("finetune" + c + " --epochs 3 --from-scratch --data " + data + " --out " + (tmp.path / "fs").string(), tmp);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("\"init\": \"scratch\"") != std::string::npos);

  const std::string eval = "evaluate --checkpoint " + (tmp.path / "ft" / "finetune_best.ckpt").string() + " --data " +
                           data + "/test.nmstride";
  const auto e1 = run(eval, tmp);
  const auto e2 = run(eval + " --batch 5", tmp);
  REQUIRE(e1.code == 0);
  CHECK(e1.out == e2.out);
  CHECK(e1.out.find("\"f1\"") != std::string::npos);

  r = run("finetune" + c + " --set model.d_enc=24 --epochs 1 --init " + ckpt + " --data " + data + " --out " +
              (tmp.path / "bad").string(),
          tmp);
  CHECK(r.code == 3);
  CHECK(r.err.find("embed.w") != std::string::npos);

  r = run("pretrain" + c + " --steps 3 --batch 8 --lr 1e30 --constant-lr --data " + data + "/train.nmstride --out " +
              (tmp.path / "nan").string(),
          tmp);
  CHECK(r.code == 4);
  CHECK(r.err.find("non-finite") != std::string::npos);
}

TEST_CASE("cli: bench prints the CSV header and a scaling fit") {
  scratch::TempDir tmp("cli_bench");
  scratch::write_text(tmp.path / "small.conf", kSmallConfig);
  const auto r = run("bench --config " + (tmp.path / "small.conf").string() + " --batches 1 --lengths 16,32,64", tmp);
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("batch,seq_len,samples_per_sec,peak_bytes\n", 0) == 0);
  CHECK(r.err.find("\"exponent\"") != std::string::npos);
  CHECK(run("bench --repeats 4", tmp).code == 2);
}
