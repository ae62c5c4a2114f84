#include <doctest.h>

#include <cstdlib>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "forge/evaluation.hpp"
#include "forge/lora.hpp"
#include "forge/records.hpp"
#include "tempdir.hpp"

using namespace forge;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

Run cli(const TempDir& dir, const std::vector<std::string>& args) {
  std::string cmd = quote(FORGE_CLI_PATH);
  for (const auto& a : args) cmd += " " + quote(a);
  const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
  cmd += " >" + quote(out.string()) + " 2>" + quote(err.string());
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

std::string record_line(const std::string& instruction, const std::string& category) {
  return nlohmann::json{{"instruction", instruction}, {"input", nullptr}, {"output", "out " + instruction},
                        {"category", category}, {"source", "fixture"}}
             .dump() +
         "\n";
}

// Small base checkpoint shared by the train/eval/ppl/generate cases.
fs::path make_base(const TempDir& dir) {
  const fs::path base = dir / "base.bin";
  const Run r = cli(dir, {"init", "--d-model", "16", "--heads", "2", "--layers", "2", "--max-seq-len", "256",
                          "--out", base.string()});
  REQUIRE(r.code == 0);
  return base;
}

fs::path make_records(const TempDir& dir, std::size_t n) {
  std::string text;
  for (std::size_t i = 0; i < n; ++i) text += record_line("Echo " + std::to_string(i) + ".", "qa");
  write_file(dir / "train.jsonl", text);
  return dir / "train.jsonl";
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("build-dataset drops translation records and keeps order") {
    TempDir dir;
    const std::vector<std::pair<std::string, std::string>> mixed = {
        {"a", "qa"}, {"b", "translation"}, {"c", "correction"}, {"d", "translation"}, {"e", "other"}, {"f", "summarization"}};
    std::string text;
    for (const auto& [i, c] : mixed) text += record_line(i, c);
    write_file(dir / "mixed.jsonl", text);
    const Run r = cli(dir, {"build-dataset", "--input", (dir / "mixed.jsonl").string(), "--exclude", "translation",
                            "--output", (dir / "out.jsonl").string()});
    REQUIRE(r.code == 0);
    const auto out = load_records(dir / "out.jsonl").records;
    REQUIRE(out.size() == 4);
    CHECK(out[0].instruction == "a");
    CHECK(out[1].instruction == "c");
    CHECK(out[2].instruction == "e");
    CHECK(out[3].instruction == "f");
    for (const auto& rec : out) CHECK(rec.category != Category::kTranslation);
    const auto manifest = nlohmann::json::parse(r.out);
    CHECK(manifest["total"] == 4);
  }

  TEST_CASE("build-dataset converts typo pairs") {
    TempDir dir;
    std::string text;
    for (int i = 0; i < 5; ++i) text += R"({"wrong":"teh )" + std::to_string(i) + R"(","corrected":"the"})" "\n";
    write_file(dir / "typo.jsonl", text);
    const Run r = cli(dir, {"build-dataset", "--typo-pairs", (dir / "typo.jsonl").string(), "--output",
                            (dir / "out.jsonl").string()});
    REQUIRE(r.code == 0);
    const auto loaded = load_records(dir / "out.jsonl");
    CHECK(loaded.manifest.count(Category::kCorrection) == 5);
  }

  TEST_CASE("build-dataset with an empty directory fails") {
    TempDir dir;
    fs::create_directories(dir / "empty");
    const Run r = cli(dir, {"build-dataset", "--input-dir", (dir / "empty").string(), "--output",
                            (dir / "out.jsonl").string()});
    CHECK(r.code != 0);
    CHECK(r.err.find("no records") != std::string::npos);
  }

  TEST_CASE("train writes adapters, a report line per epoch and the config") {
    TempDir dir;
    const fs::path base = make_base(dir);
    const fs::path data = make_records(dir, 6);
    const Run r = cli(dir, {"train", "--base", base.string(), "--data", data.string(), "--out",
                            (dir / "run").string(), "--epochs", "1", "--batch", "4", "--seq-len", "128",
                            "--targets", "q_proj,v_proj", "--seed", "3"});
    REQUIRE(r.code == 0);
    const auto summary = nlohmann::json::parse(r.out);
    CHECK(summary["adapters"] == 4);
    CHECK(summary["steps"] == 2);
    const std::string report = read_file(dir / "run" / "train_report.jsonl");
    CHECK(std::count(report.begin(), report.end(), '\n') == 1);
    CHECK(fs::exists(dir / "run" / "adapter.bin"));
    CHECK(fs::exists(dir / "run" / "adapter-epoch-1.bin"));
    CHECK(r.err.find("# effective config") != std::string::npos);
    CHECK(read_file(dir / "run" / "run.cfg").find("seed = 3") != std::string::npos);
  }

  TEST_CASE("invalid rank is a configuration error") {
    TempDir dir;
    const fs::path base = make_base(dir);
    const fs::path data = make_records(dir, 2);
    const Run r = cli(dir, {"train", "--base", base.string(), "--data", data.string(), "--out",
                            (dir / "run").string(), "--rank", "0"});
    CHECK(r.code == 2);
    CHECK(r.err.find("rank") != std::string::npos);
  }

  TEST_CASE("config file and flag precedence") {
    TempDir dir;
    const fs::path base = make_base(dir);
    const fs::path data = make_records(dir, 4);
    write_file(dir / "run.cfg", "train.epochs = 2\nlora.rank = 2\nseed = 5\n");
    const Run r = cli(dir, {"train", "--config", (dir / "run.cfg").string(), "--base", base.string(), "--data",
                            data.string(), "--out", (dir / "run").string(), "--epochs", "1", "--seq-len", "128"});
    REQUIRE(r.code == 0);
    const std::string cfg = read_file(dir / "run" / "run.cfg");
    CHECK(cfg.find("train.epochs = 1") != std::string::npos);
    CHECK(cfg.find("lora.rank = 2") != std::string::npos);
    CHECK(cfg.find("seed = 5") != std::string::npos);
    write_file(dir / "bad.cfg", "train.epoch = 2\n");
    const Run bad = cli(dir, {"train", "--config", (dir / "bad.cfg").string(), "--base", base.string(), "--data",
                              data.string(), "--out", (dir / "run2").string()});
    CHECK(bad.code == 2);
  }

  TEST_CASE("eval reports every requested shot count") {
    TempDir dir;
    const fs::path base = make_base(dir);
    std::string tasks;
    for (int i = 0; i < 6; ++i)
      tasks += R"({"fields":{"text":"item )" + std::to_string(i) + R"("},"choices":["yes","no"],"gold":)" +
               std::to_string(i % 2) + "}\n";
    write_file(dir / "tasks.jsonl", tasks);
    const Run r = cli(dir, {"eval", "--base", base.string(), "--tasks", (dir / "tasks.jsonl").string(), "--shots",
                            "1,2,3", "--report", (dir / "report.json").string()});
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(read_file(dir / "report.json"));
    CHECK(j["accuracy"].size() == 3);
    CHECK(j["accuracy"].contains("1-shot"));
    CHECK(j["accuracy"].contains("3-shot"));
  }

  TEST_CASE("ppl matches the library computation") {
    TempDir dir;
    const fs::path base = make_base(dir);
    write_file(dir / "items.jsonl", R"({"question":"What is red?","response":"a color"})" "\n"
                                    R"({"question":"Say hi.","response":"hi"})" "\n");
    const Run r = cli(dir, {"ppl", "--base", base.string(), "--items", (dir / "items.jsonl").string()});
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    const auto want = corpus_perplexity(load_checkpoint(base), load_perplexity_items(dir / "items.jsonl"));
    CHECK(j["perplexity"]["pooled"].get<double>() == doctest::Approx(want.pooled).epsilon(1e-12));
    CHECK_FALSE(j.contains("accuracy"));
  }

  TEST_CASE("greedy generate is repeatable") {
    TempDir dir;
    const fs::path base = make_base(dir);
    const std::vector<std::string> args = {"generate", "--base", base.string(), "--instruction", "Say hi.",
                                           "--max-new-tokens", "8", "--temperature", "0", "--json"};
    const Run a = cli(dir, args);
    const Run b = cli(dir, args);
    REQUIRE(a.code == 0);
    CHECK(a.out == b.out);
    CHECK(nlohmann::json::parse(a.out).contains("text"));
  }

  TEST_CASE("missing files are runtime errors") {
    TempDir dir;
    const Run r = cli(dir, {"ppl", "--base", (dir / "nope.bin").string(), "--items", (dir / "nope.jsonl").string()});
    CHECK(r.code == 1);
  }
}
