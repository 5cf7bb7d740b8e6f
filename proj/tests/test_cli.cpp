#include <doctest.h>

#include <sstream>
#include <string>

#include "commands.hpp"
#include "mutatt/checkpoint.hpp"
#include "mutatt/config.hpp"
#include "mutatt/error.hpp"
#include "test_support.hpp"

using namespace mutatt;
namespace fs = std::filesystem;

namespace {

std::string last_line(const std::string& text) {
  std::string trimmed = text;
  while (!trimmed.empty() && trimmed.back() == '\n') trimmed.pop_back();
  const auto pos = trimmed.rfind('\n');
  return pos == std::string::npos ? trimmed : trimmed.substr(pos + 1);
}

// A config that synthesizes and trains in about a second.
RunConfig small_config(const fs::path& out) {
  RunConfig c;
  c.synth = test::small_spec(20, 3);
  c.dims.embed_dim = 6;
  c.dims.hidden_dim = 6;
  c.train.batch_size = 4;
  c.train.max_iterations = 20;
  c.checkpoint_every = 10;
  c.out_dir = out;
  return c;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("parses assignments and comments") {
    RunConfig c;
    c.apply_text("# comment\n train.batch_size = 7  # trailing\n\nablation = all=vl\nsynth.noise_std=0.25\n");
    CHECK(c.train.batch_size == 7);
    CHECK(c.synth.noise_std == 0.25);
    CHECK(c.get("ablation") == AblationFlags::parse("all=vl").to_string());
  }

  TEST_CASE("unknown key and bad values are errors naming the line") {
    RunConfig c;
    CHECK_THROWS_AS(c.apply_text("train.batchsize = 3\n"), ConfigError);
    CHECK_THROWS_AS(c.apply_text("train.batch_size = many\n"), ConfigError);
    CHECK_THROWS_AS(c.apply_text("train.parallel = maybe\n"), ConfigError);
    CHECK_THROWS_AS(c.apply_text("eval.protocol = map\n"), ConfigError);
    CHECK_THROWS_AS(c.apply_text("no equals sign\n"), ConfigError);
    try {
      c.apply_text("\n\ntrain.margin = x\n", "run.cfg");
      FAIL("expected an error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("run.cfg:3") != std::string::npos);
    }
  }

  TEST_CASE("text round trip covers every key") {
    RunConfig a;
    a.train.seed = 42;
    a.synth.num_images = 17;
    a.out_dir = "/tmp/x";
    RunConfig b;
    b.apply_text(a.to_text());
    CHECK(b.to_text() == a.to_text());
    for (const std::string& key : RunConfig::keys()) {
      CHECK(a.to_text().find(key + " = ") != std::string::npos);
    }
  }

  TEST_CASE("text without paths ignores where a run writes") {
    RunConfig a, b;
    a.out_dir = "one";
    b.out_dir = "two";
    b.data_dir = "three";
    CHECK(a.to_text(false) == b.to_text(false));
    CHECK(a.to_text(false).find("paths.") == std::string::npos);
    CHECK(a.to_text() != b.to_text());
  }

  TEST_CASE("model hash tracks training settings only") {
    RunConfig a, b;
    b.out_dir = "elsewhere";
    b.protocol = "det";
    CHECK(a.model_hash() == b.model_hash());
    b.train.learning_rate = 1e-3;
    CHECK(a.model_hash() != b.model_hash());
    RunConfig c;
    c.set("ablation", "all=none");
    CHECK(a.model_hash() != c.model_hash());
  }

  TEST_CASE("config file") {
    test::TempDir dir("cfg");
    test::write_text(dir.path() / "a.cfg", "train.max_iterations = 12\n");
    RunConfig c;
    c.apply_file(dir.path() / "a.cfg");
    CHECK(c.train.max_iterations == 12);
    CHECK_THROWS_AS(c.apply_file(dir.path() / "missing.cfg"), ConfigError);
  }
}

TEST_SUITE("commands") {
  TEST_CASE("synth writes the dataset and repeats its checksum") {
    test::TempDir a("cli_synth_a"), b("cli_synth_b");
    std::ostringstream out_a, out_b;
    CHECK(cli::cmd_synth(small_config(a.path()), out_a) == cli::kExitOk);
    CHECK(cli::cmd_synth(small_config(b.path()), out_b) == cli::kExitOk);
    CHECK(fs::exists(a.path() / kIndexFile));
    CHECK(fs::exists(a.path() / kBlobFile));
    CHECK(fs::exists(a.path() / kVocabFile));
    const std::string line = last_line(out_a.str());
    CHECK(line.starts_with("RESULT cmd=synth status=ok"));
    CHECK(line == last_line(out_b.str()));
  }

  TEST_CASE("train, eval, dump-attn and resume") {
    test::TempDir dir("cli_train");
    RunConfig config = small_config(dir.path());
    config.set("ablation", "all=vl");
    std::ostringstream sink;
    REQUIRE(cli::cmd_synth(config, sink) == cli::kExitOk);

    std::ostringstream train_out;
    CHECK(cli::cmd_train(config, std::nullopt, train_out) == cli::kExitOk);
    const std::string train_line = last_line(train_out.str());
    CHECK(train_line.starts_with("RESULT cmd=train status=ok steps=20"));
    CHECK(train_line.find("ablation=" + config.train.ablation.to_string()) != std::string::npos);
    const fs::path checkpoint = dir.path() / cli::kCheckpointFile;
    REQUIRE(fs::exists(checkpoint));
    CHECK(fs::exists(dir.path() / cli::kTrainLogFile));
    CHECK(fs::exists(dir.path() / cli::kResolvedConfigFile));
    const Checkpoint ck = load_checkpoint(checkpoint);
    CHECK(ck.config_hash == config.model_hash());
    CHECK(ck.optimizer.step == 20);
    CHECK(ck.config_text.find("ablation = " + config.train.ablation.to_string()) != std::string::npos);

    for (const char* protocol : {"gt", "det"}) {
      config.protocol = protocol;
      std::ostringstream eval_out;
      CHECK(cli::cmd_eval(config, checkpoint, std::nullopt, eval_out) == cli::kExitOk);
      CHECK(last_line(eval_out.str()).starts_with(std::string("RESULT cmd=eval status=ok protocol=") + protocol));
      CHECK(fs::exists(dir.path() / cli::eval_report_file(protocol)));
    }
    std::ostringstream override_out;
    config.protocol = "gt";
    CHECK(cli::cmd_eval(config, checkpoint, std::string("all=none"), override_out) == cli::kExitOk);

    std::ostringstream dump_out;
    CHECK(cli::cmd_dump_attention(config, checkpoint, std::size_t{0}, dump_out) == cli::kExitOk);
    CHECK(last_line(dump_out.str()).starts_with("RESULT cmd=dump-attn status=ok expression=0"));
    CHECK(fs::exists(dir.path() / cli::kAttentionFile));
    CHECK_THROWS_AS(cli::cmd_dump_attention(config, checkpoint, std::size_t{100000}, dump_out), IndexError);

    RunConfig longer = config;
    longer.train.max_iterations = 30;
    std::ostringstream resume_out;
    CHECK(cli::cmd_train(longer, checkpoint, resume_out) == cli::kExitOk);
    CHECK(load_checkpoint(checkpoint).optimizer.step == 30);
  }

  TEST_CASE("det evaluation without detections is a config error") {
    test::TempDir dir("cli_nodet");
    RunConfig config = small_config(dir.path());
    config.synth.with_detections = false;
    std::ostringstream sink;
    REQUIRE(cli::cmd_synth(config, sink) == cli::kExitOk);
    REQUIRE(cli::cmd_train(config, std::nullopt, sink) == cli::kExitOk);
    config.protocol = "det";
    try {
      cli::cmd_eval(config, dir.path() / cli::kCheckpointFile, std::nullopt, sink);
      FAIL("expected ConfigError");
    } catch (const std::exception& e) {
      CHECK(dynamic_cast<const ConfigError*>(&e) != nullptr);
      CHECK(cli::exit_code_for(e) == cli::kExitConfig);
    }
  }

  TEST_CASE("train on a missing dataset maps to the data exit code") {
    test::TempDir dir("cli_nodata");
    std::ostringstream sink;
    try {
      cli::cmd_train(small_config(dir.path()), std::nullopt, sink);
      FAIL("expected DatasetError");
    } catch (const std::exception& e) {
      CHECK(cli::exit_code_for(e) == cli::kExitData);
    }
  }

  TEST_CASE("verify passes and reports an injected fault") {
    RunConfig config;
    std::ostringstream ok, bad;
    CHECK(cli::cmd_verify(config, false, ok) == cli::kExitOk);
    CHECK(last_line(ok.str()).starts_with("RESULT cmd=verify status=ok"));
    CHECK(cli::cmd_verify(config, true, bad) == cli::kExitCheckFailed);
    CHECK(last_line(bad.str()).starts_with("RESULT cmd=verify status=fail"));
  }

  TEST_CASE("exit code mapping") {
    CHECK(cli::exit_code_for(ConfigError("x")) == cli::kExitConfig);
    CHECK(cli::exit_code_for(ChecksumError("x")) == cli::kExitData);
    CHECK(cli::exit_code_for(DatasetError(DatasetError::Kind::kMalformed, "x")) == cli::kExitData);
    CHECK(cli::exit_code_for(NonFiniteError("x")) == cli::kExitNonFinite);
    CHECK(cli::exit_code_for(std::runtime_error("x")) == cli::kExitInternal);
  }
}
