#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "mdkt/mdkt.h"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// small enough to train inside a unit test
json tiny_run_config(const std::string& out_dir, const std::string& run_name) {
  return json{
      {"run_name", run_name},
      {"output_dir", out_dir},
      {"dataset",
       {{"n_train_ids", 5},
        {"n_test_ids", 3},
        {"n_cameras", 2},
        {"frames_per_clip", 4},
        {"clips_per_id_per_camera", 2},
        {"latent_dim", 4},
        {"frame_dim", 8},
        {"seed", 21}}},
      {"model", {{"layer_dims", {8, 8, 4}}, {"init_seed", 2}}},
      {"batch", {{"P", 3}, {"K", 2}, {"N", 4}, {"M", 2}}},
      {"teacher_train", {{"epochs", 2}, {"steps_per_epoch", 3}, {"seed", 4}}},
      {"distill_train", {{"epochs", 2}, {"steps_per_epoch", 3}, {"seed", 5}}},
  };
}

struct OwnedString {
  char* value = nullptr;
  ~OwnedString() { mdkt_string_free(value); }
};

}  // namespace

TEST_CASE("version and error reporting basics") {
  CHECK(std::strlen(mdkt_version()) > 0);
  mdkt_dataset* ds = nullptr;
  CHECK(mdkt_dataset_generate("not json", &ds) == MDKT_ERR_CONFIG);
  CHECK(std::strlen(mdkt_last_error()) > 0);
  CHECK(mdkt_dataset_generate(nullptr, &ds) == MDKT_ERR_CONFIG);
}

TEST_CASE("dataset generate / save / load / summary through the C API") {
  const std::string dir = (fs::temp_directory_path() / "mdkt_capi_ds").string();
  fs::create_directories(dir);
  const std::string path = dir + "/data.bin";

  const std::string cfg =
      R"({"n_train_ids": 4, "n_test_ids": 2, "n_cameras": 2, "frames_per_clip": 4,
          "latent_dim": 4, "frame_dim": 8, "seed": 77})";
  mdkt_dataset* ds = nullptr;
  REQUIRE(mdkt_dataset_generate(cfg.c_str(), &ds) == MDKT_OK);
  REQUIRE(ds != nullptr);
  REQUIRE(mdkt_dataset_save(ds, path.c_str()) == MDKT_OK);

  OwnedString summary;
  REQUIRE(mdkt_dataset_summary(ds, &summary.value) == MDKT_OK);
  const json parsed = json::parse(summary.value);
  CHECK(parsed.at("n_train_clips") == 4 * 2 * 2);
  CHECK(parsed.at("n_test_clips") == 2 * 2 * 2);

  mdkt_dataset* loaded = nullptr;
  REQUIRE(mdkt_dataset_load(path.c_str(), &loaded) == MDKT_OK);
  OwnedString summary2;
  REQUIRE(mdkt_dataset_summary(loaded, &summary2.value) == MDKT_OK);
  CHECK(std::string(summary.value) == summary2.value);

  mdkt_dataset_free(ds);
  mdkt_dataset_free(loaded);

  CHECK(mdkt_dataset_load((dir + "/missing.bin").c_str(), &loaded) == MDKT_ERR_IO);
  fs::remove_all(dir);
}

TEST_CASE("full pipeline through the C API: train, distill, evaluate") {
  const std::string dir = (fs::temp_directory_path() / "mdkt_capi_pipeline").string();
  fs::remove_all(dir);
  const json cfg = tiny_run_config(dir, "t");
  const std::string cfg_text = cfg.dump();

  // distill before the teacher exists: config/user error (exit contract 2)
  OwnedString premature;
  CHECK(mdkt_distill(cfg_text.c_str(), &premature.value) == MDKT_ERR_CONFIG);
  CHECK(std::string(mdkt_last_error()).find("teacher checkpoint") != std::string::npos);

  OwnedString teacher_report;
  REQUIRE(mdkt_train_teacher(cfg_text.c_str(), &teacher_report.value) == MDKT_OK);
  const json tr = json::parse(teacher_report.value);
  CHECK(tr.at("stage") == "teacher");
  const std::string teacher_ckpt = tr.at("final_checkpoint");
  CHECK(fs::exists(teacher_ckpt));

  OwnedString distill_report;
  REQUIRE(mdkt_distill(cfg_text.c_str(), &distill_report.value) == MDKT_OK);
  const json dr = json::parse(distill_report.value);
  const std::string student_ckpt = dr.at("final_checkpoint");
  CHECK(fs::exists(student_ckpt));
  CHECK(fs::exists(dr.at("final_teacher_checkpoint").get<std::string>()));

  mdkt_model* model = nullptr;
  REQUIRE(mdkt_model_load(student_ckpt.c_str(), &model) == MDKT_OK);
  const std::string copy_path = dir + "/copy.ckpt";
  REQUIRE(mdkt_model_save(model, copy_path.c_str()) == MDKT_OK);
  mdkt_model_free(model);
  // byte-identical round trip
  std::ifstream a(student_ckpt, std::ios::binary), b(copy_path, std::ios::binary);
  std::string bytes_a((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string bytes_b((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(bytes_a == bytes_b);

  OwnedString eval_report;
  REQUIRE(mdkt_evaluate(cfg_text.c_str(), student_ckpt.c_str(), "student",
                        &eval_report.value) == MDKT_OK);
  const json er = json::parse(eval_report.value);
  CHECK(er.at("i2v").at("mode") == "I2V");
  CHECK(er.at("v2v").at("mode") == "V2V");
  CHECK(er.at("i2v").at("network") == "student");
  CHECK(er.at("i2v").contains("cmc1"));
  CHECK(er.at("i2v").contains("cmc5"));
  CHECK(er.at("i2v").contains("mAP"));
  CHECK(er.at("i2v").contains("config_digest"));

  // teacher label accepted too
  OwnedString eval_teacher;
  CHECK(mdkt_evaluate(cfg_text.c_str(), teacher_ckpt.c_str(), "teacher", &eval_teacher.value) ==
        MDKT_OK);
  CHECK(mdkt_evaluate(cfg_text.c_str(), teacher_ckpt.c_str(), "referee", &premature.value) ==
        MDKT_ERR_CONFIG);

  // byte-identical metrics when re-run with the same config and seed
  OwnedString eval_again;
  REQUIRE(mdkt_evaluate(cfg_text.c_str(), student_ckpt.c_str(), "student",
                        &eval_again.value) == MDKT_OK);
  CHECK(std::string(eval_report.value) == eval_again.value);

  fs::remove_all(dir);
}

TEST_CASE("ablation suite through the C API emits the fixed table shape") {
  const std::string dir = (fs::temp_directory_path() / "mdkt_capi_ablate").string();
  fs::remove_all(dir);
  json cfg = tiny_run_config(dir, "ab");
  cfg["teacher_train"]["epochs"] = 1;
  cfg["distill_train"]["epochs"] = 1;

  OwnedString table;
  REQUIRE(mdkt_ablate(cfg.dump().c_str(), "ce", 2, 1, &table.value) == MDKT_OK);
  const json parsed = json::parse(table.value);
  CHECK(parsed.at("suite") == "ce");
  CHECK(parsed.at("table").at("rows").size() == 2);
  const std::string csv = parsed.at("csv");
  CHECK(csv.rfind("label,seed_count,i2v_cmc1_mean,i2v_cmc1_std,i2v_map_mean,i2v_map_std,"
                  "v2v_cmc1_mean,v2v_cmc1_std,v2v_map_mean,v2v_map_std\n",
                  0) == 0);
  CHECK(fs::exists(dir + "/ab/ablate-ce/ce.csv"));
  CHECK(fs::exists(dir + "/ab/ablate-ce/ce.json"));

  OwnedString bad;
  CHECK(mdkt_ablate(cfg.dump().c_str(), "bogus_suite", 1, 1, &bad.value) == MDKT_ERR_CONFIG);
  fs::remove_all(dir);
}
