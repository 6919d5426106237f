// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <string>

#include "netmamba/netmamba.h"
#include "scratch.hpp"

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  nm_string_free(s);
  return out;
}

std::string get(const nm_config* cfg, const char* key) {
  char* v = nullptr;
  REQUIRE(nm_config_get(cfg, key, &v) == NM_OK);
  return take(v);
}

/// Desk-size layout and model so every call finishes in well under a second.
nm_config* small_config() {
  nm_config* cfg = nm_config_new();
  const char* kv[][2] = {{"repr.packets_per_flow", "2"}, {"repr.header_bytes", "40"}, {"repr.payload_bytes", "24"},
                         {"model.d_enc", "16"},          {"model.e_enc", "32"},       {"model.depth_enc", "1"},
                         {"model.d_dec", "8"},           {"model.e_dec", "16"},       {"model.depth_dec", "1"},
                         {"model.d_state", "4"},         {"model.dt_rank", "4"},      {"pretrain.batch", "8"},
                         {"pretrain.steps", "6"},        {"pretrain.log_every", "2"}, {"finetune.batch", "8"},
                         {"finetune.epochs", "2"},       {"seed", "11"}};
  for (const auto& p : kv) REQUIRE(nm_config_set(cfg, p[0], p[1]) == NM_OK);
  return cfg;
}

}  // namespace

TEST_CASE("C API: config handle, precedence and error reporting") {
  scratch::TempDir tmp("capi_cfg");
  scratch::write_text(tmp.path / "a.conf", "finetune.lr = 1e-3\nfinetune.batch = 16\n");

  nm_config* cfg = nm_config_new();
  REQUIRE(cfg);
  CHECK(get(cfg, "finetune.epochs") == "120");
  REQUIRE(nm_config_load_file(cfg, (tmp.path / "a.conf").c_str()) == NM_OK);
  REQUIRE(nm_config_set(cfg, "finetune.batch", "4") == NM_OK);
  CHECK(get(cfg, "finetune.epochs") == "120");
  CHECK(get(cfg, "finetune.lr") == "0.001");
  CHECK(get(cfg, "finetune.batch") == "4");

  CHECK(nm_config_set(cfg, "finetune.bogus", "1") == NM_ERR_CONFIG);
  CHECK(std::string(nm_last_error()).find("finetune.bogus") != std::string::npos);
  CHECK(nm_config_set(cfg, "finetune.batch", "x") == NM_ERR_CONFIG);
  CHECK(nm_config_set(cfg, nullptr, "1") == NM_ERR_ARGUMENT);
  CHECK(nm_config_set(nullptr, "seed", "1") == NM_ERR_ARGUMENT);
  CHECK(nm_config_load_file(cfg, (tmp.path / "missing.conf").c_str()) == NM_ERR_CONFIG);
  REQUIRE(nm_config_set(cfg, "seed", "1") == NM_OK);
  CHECK(std::string(nm_last_error()).empty());

  char* text = nullptr;
  REQUIRE(nm_config_dump(cfg, &text) == NM_OK);
  CHECK(take(text).find("finetune.batch = 4\n") != std::string::npos);
  nm_config_free(cfg);
  nm_config_free(nullptr);
}

TEST_CASE("C API: parameter counts of the default configuration") {
  nm_config* cfg = nm_config_new();
  std::uint64_t pre = 0, fine = 0;
  REQUIRE(nm_count_parameters(cfg, 20, &pre, &fine) == NM_OK);
  CHECK(pre == 2180100);
  CHECK(fine == 1925140);
  CHECK(nm_count_parameters(cfg, 1, &pre, &fine) == NM_ERR_CONFIG);
  nm_config_free(cfg);
}

TEST_CASE("C API: synthesize, pretrain, finetune, evaluate, save/load") {
  scratch::TempDir tmp("capi_run");
  const auto data = tmp.path / "data";
  nm_config* cfg = small_config();
  REQUIRE(nm_synthesize(cfg, 3, 20, data.c_str()) == NM_OK);
  const auto train_file = (data / "train.nmstride").string();

  char* report = nullptr;
  REQUIRE(nm_pretrain(cfg, train_file.c_str(), (tmp.path / "pt").c_str(), nullptr, &report) == NM_OK);
  CHECK(take(report).find("\"final_step\": 6") != std::string::npos);
  CHECK(scratch::read_text(tmp.path / "pt" / "loss_log.csv").rfind("step,loss,lr\n", 0) == 0);

  const auto pt_last = (tmp.path / "pt" / "pretrain_last.ckpt").string();
  REQUIRE(nm_finetune(cfg, data.c_str(), (tmp.path / "ft").c_str(), pt_last.c_str(), &report) == NM_OK);
  const std::string ft_report = take(report);
  CHECK(ft_report.find("\"best_epoch\"") != std::string::npos);
  CHECK(ft_report.find("\"test\"") != std::string::npos);
  REQUIRE(nm_finetune(cfg, data.c_str(), (tmp.path / "ft0").c_str(), nullptr, &report) == NM_OK);
  CHECK(take(report).find("\"init\": \"scratch\"") != std::string::npos);

  nm_model* model = nullptr;
  REQUIRE(nm_model_load((tmp.path / "ft" / "finetune_best.ckpt").c_str(), &model) == NM_OK);
  const auto test_file = (data / "test.nmstride").string();
  char* r1 = nullptr;
  char* r2 = nullptr;
  REQUIRE(nm_evaluate(model, test_file.c_str(), 4, &r1) == NM_OK);
  REQUIRE(nm_evaluate(model, test_file.c_str(), 7, &r2) == NM_OK);
  const std::string first = take(r1);
  CHECK(first == take(r2));
  CHECK(first.find("\"accuracy\"") != std::string::npos);
  CHECK(nm_evaluate(model, test_file.c_str(), 0, &r1) == NM_ERR_CONFIG);
  CHECK(nm_evaluate(model, (tmp.path / "none.nmstride").c_str(), 4, &r1) == NM_ERR_DATA);

  const auto copy = (tmp.path / "copy.ckpt").string();
  REQUIRE(nm_model_save(model, copy.c_str()) == NM_OK);
  nm_model* again = nullptr;
  REQUIRE(nm_model_load(copy.c_str(), &again) == NM_OK);
  REQUIRE(nm_evaluate(again, test_file.c_str(), 4, &r1) == NM_OK);
  CHECK(take(r1) == first);
  char* conf = nullptr;
  REQUIRE(nm_model_config(again, &conf) == NM_OK);
  CHECK(take(conf).find("\"d_enc\": 16") != std::string::npos);
  nm_model_free(again);
  nm_model_free(model);

  // Encoder width differs from the checkpoint.
  REQUIRE(nm_config_set(cfg, "model.d_enc", "24") == NM_OK);
  CHECK(nm_finetune(cfg, data.c_str(), (tmp.path / "bad").c_str(), pt_last.c_str(), &report) == NM_ERR_CHECKPOINT);
  CHECK(std::string(nm_last_error_tensor()) == "embed.w");
  CHECK(nm_pretrain(cfg, train_file.c_str(), (tmp.path / "bad").c_str(), pt_last.c_str(), &report) ==
        NM_ERR_CHECKPOINT);
  nm_config_free(cfg);
}

TEST_CASE("C API: missing inputs and numeric faults map to status codes") {
  scratch::TempDir tmp("capi_err");
  nm_config* cfg = small_config();
  char* out = nullptr;
  CHECK(nm_extract(cfg, (tmp.path / "missing").c_str(), (tmp.path / "out").c_str(), &out) == NM_ERR_DATA);
  CHECK(std::string(nm_last_error()).find("missing") != std::string::npos);
  CHECK(nm_finetune(cfg, (tmp.path / "missing").c_str(), (tmp.path / "ft").c_str(), nullptr, &out) == NM_ERR_DATA);
  scratch::write_file(tmp.path / "junk.nmstride", {1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(nm_pretrain(cfg, (tmp.path / "junk.nmstride").c_str(), nullptr, nullptr, &out) == NM_ERR_FORMAT);
  nm_model* model = nullptr;
  CHECK(nm_model_load((tmp.path / "junk.nmstride").c_str(), &model) == NM_ERR_FORMAT);
  CHECK(model == nullptr);

  REQUIRE(nm_synthesize(cfg, 2, 10, (tmp.path / "d").c_str()) == NM_OK);
  REQUIRE(nm_config_set(cfg, "pretrain.lr", "1e30") == NM_OK);
  REQUIRE(nm_config_set(cfg, "pretrain.constant_lr", "true") == NM_OK);
  CHECK(nm_pretrain(cfg, (tmp.path / "d" / "train.nmstride").c_str(), nullptr, nullptr, &out) == NM_ERR_NUMERIC);
  nm_config_free(cfg);
}

TEST_CASE("C API: bench CSV and scaling report") {
  nm_config* cfg = small_config();
  REQUIRE(nm_config_set(cfg, "bench.batches", "1,2") == NM_OK);
  REQUIRE(nm_config_set(cfg, "bench.lengths", "16,32,64") == NM_OK);
  char* csv = nullptr;
  char* fit = nullptr;
  REQUIRE(nm_bench(cfg, nullptr, &csv, &fit) == NM_OK);
  const std::string table = take(csv);
  CHECK(table.rfind("batch,seq_len,samples_per_sec,peak_bytes\n", 0) == 0);
  int lines = 0;
  for (char c : table) lines += c == '\n';
  CHECK(lines == 7);
  CHECK(take(fit).find("\"exponent\"") != std::string::npos);
  CHECK(nm_bench(cfg, nullptr, nullptr, nullptr) == NM_ERR_ARGUMENT);
  nm_config_free(cfg);
}
