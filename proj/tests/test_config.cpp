// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <limits>
#include <set>

#include "config/run_config.hpp"
#include "errors.hpp"
#include "scratch.hpp"

using namespace netmamba;
using netmamba::config::RunConfig;

TEST_CASE("RunConfig: defaults match the reference hyper-parameters") {
  const RunConfig rc;
  CHECK(rc.get("pretrain.batch") == "128");
  CHECK(rc.get("pretrain.steps") == "150000");
  CHECK(rc.get("pretrain.lr") == "0.001");
  CHECK(rc.get("finetune.batch") == "64");
  CHECK(rc.get("finetune.epochs") == "120");
  CHECK(rc.get("finetune.lr") == "0.002");
  CHECK(rc.get("model.mask_ratio") == "0.9");
  CHECK(rc.get("model.norm") == "rms");
  CHECK(rc.get("model.recon_target") == "raw");
  CHECK(rc.get("repr.anonymize_ips") == "true");
  CHECK(rc.get("bench.lengths") == "400,800,1600");

  const auto keys = RunConfig::keys();
  CHECK(std::set<std::string>(keys.begin(), keys.end()).size() == keys.size());
}

TEST_CASE("RunConfig: flag > config file > built-in default") {
  scratch::TempDir tmp("config");
  const auto file = tmp.path / "run.conf";
  scratch::write_text(file,
                      "# layer two\n"
                      "pretrain.batch = 32\n"
                      "\n"
                      "pretrain.lr = 5e-4   # trailing comment\n"
                      "model.norm=layer\n");
  RunConfig rc;
  rc.load_file(file);
  rc.set("pretrain.batch", "8");  // layer three

  CHECK(rc.get("pretrain.steps") == "150000");  // default survives
  CHECK(rc.get("pretrain.lr") == "0.0005");     // file beats default
  CHECK(rc.get("model.norm") == "layer");
  CHECK(rc.get("pretrain.batch") == "8");  // flag beats file
  CHECK(rc.pretrain_options().batch == 8);
  CHECK(rc.pretrain_options().lr == doctest::Approx(5e-4));
}

TEST_CASE("RunConfig: unknown keys and malformed values are rejected") {
  RunConfig rc;
  CHECK_THROWS_AS(rc.set("pretrain.batchsize", "8"), ConfigError);
  CHECK_THROWS_AS(rc.set("pretrain.batch", "eight"), ConfigError);
  CHECK_THROWS_AS(rc.set("pretrain.batch", "-1"), ConfigError);
  CHECK_THROWS_AS(rc.set("pretrain.batch", "1.5"), ConfigError);
  CHECK_THROWS_AS(rc.set("pretrain.batch", "0"), ConfigError);
  CHECK_THROWS_AS(rc.set("pretrain.lr", "fast"), ConfigError);
  CHECK_THROWS_AS(rc.set("pretrain.lr", "nan"), ConfigError);
  CHECK_THROWS_AS(rc.set("pretrain.lr", "inf"), ConfigError);
  CHECK_THROWS_AS(rc.set("repr.drop_dhcp", "maybe"), ConfigError);
  CHECK_THROWS_AS(rc.set("model.norm", "batch"), ConfigError);
  CHECK_THROWS_AS(rc.set("bench.repeats", "4"), ConfigError);
  CHECK_THROWS_AS(rc.set("bench.lengths", "400,,800"), ConfigError);
  CHECK(rc.get("pretrain.batch") == "128");

  rc.set("repr.drop_dhcp", "off");
  CHECK_FALSE(rc.repr.drop_dhcp);
  rc.set("bench.lengths", " 10, 20 ,40 ");
  CHECK(rc.bench.lengths == std::vector<std::size_t>{10, 20, 40});

  try {
    rc.load_text("seed = 3\nno_such_key = 1\n", "run.conf");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("run.conf:2") != std::string::npos);
    CHECK(std::string(e.what()).find("no_such_key") != std::string::npos);
  }
  CHECK_THROWS_AS(rc.load_text("seed 3\n"), ConfigError);
  CHECK_THROWS_AS(rc.load_file("/nonexistent/run.conf"), ConfigError);
}

TEST_CASE("RunConfig: dump reloads to the same configuration") {
  RunConfig a;
  a.set("model.d_enc", "48");
  a.set("extract.val_ratio", "0.15");
  a.set("model.recon_target", "embedded");
  a.set("seed", "18446744073709551615");
  RunConfig b;
  b.load_text(a.dump());
  CHECK(b.dump() == a.dump());
  CHECK(b.seed == std::numeric_limits<std::uint64_t>::max());
}

TEST_CASE("RunConfig: derived option structs") {
  RunConfig rc;
  rc.set("seed", "9");
  rc.set("extract.min_packets", "3");
  auto ex = rc.extract_options();
  CHECK(ex.seed == 9);
  CHECK(ex.min_packets == 3);
  CHECK(ex.limit_upper == std::numeric_limits<std::size_t>::max());
  rc.set("extract.limit_upper", "50");
  CHECK(rc.extract_options().limit_upper == 50);
  CHECK(rc.finetune_options().seed == 9);
  CHECK(rc.bench_options().seed == 9);

  const auto m = rc.model_config(4, 64, 10);
  CHECK(m.num_strides == 64);
  CHECK(m.num_classes == 10);
  CHECK(m.d_enc == 256);
  CHECK_THROWS_AS(rc.model_config(4, 64, 1), ConfigError);
  rc.set("model.mask_ratio", "1");
  CHECK_THROWS_AS(rc.model_config(4, 64, 2), ConfigError);
}
