// Drives the installed command-line binary end to end through a shell, so
// argument parsing, exit codes, and artifact bytes are all tested for real.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "sivit/image.hpp"

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
    const std::string cmd =
        std::string("SIVIT_VERBOSE=0 ") + SIVIT_BIN + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    REQUIRE(WIFEXITED(rc));
    return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

// All regular files in `dir` as name -> bytes.
std::map<std::string, std::string> dir_contents(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file()) {
            out[entry.path().filename().string()] = slurp(entry.path());
        }
    }
    return out;
}

// One tiny dataset root (train/val/test) shared read-only by every case.
const std::string& dataset_root() {
    static const std::string root = [] {
        const fs::path p = fs::temp_directory_path() / "sivit_cli_data";
        fs::remove_all(p);
        REQUIRE(run_cli("generate --out " + (p / "train").string() +
                        " --seed 21 --pos 8 --neg 8 --image-size 16") == 0);
        REQUIRE(run_cli("generate --out " + (p / "val").string() +
                        " --seed 22 --pos 4 --neg 4 --image-size 16") == 0);
        REQUIRE(run_cli("generate --out " + (p / "test").string() +
                        " --seed 23 --pos 4 --neg 4 --image-size 16") == 0);
        return p.string();
    }();
    return root;
}

// Flags for a training run small enough for a test suite.
std::string tiny_train_flags() {
    return " --patch-size 4 --embed-dim 8 --depth 1 --heads 2 --batch-size 8"
           " --no-augment --seed 5";
}

struct TempDir {
    fs::path path;
    explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("generate is deterministic and respects the sample counts") {
    TempDir dir("sivit_cli_gen");
    const std::string a = (dir.path / "a").string();
    const std::string b = (dir.path / "b").string();
    CHECK(run_cli("generate --out " + a + " --seed 7 --pos 3 --neg 2 --image-size 16") == 0);
    CHECK(run_cli("generate --out " + b + " --seed 7 --pos 3 --neg 2 --image-size 16") == 0);
    CHECK(dir_contents(a) == dir_contents(b));

    // 3 + 2 samples, each with an image and a mask, plus the index.
    CHECK(dir_contents(a).size() == 11);
    const std::string index = slurp(fs::path(a) / "index.tsv");
    CHECK(std::count(index.begin(), index.end(), '\n') == 5);

    const std::string n = (dir.path / "none").string();
    CHECK(run_cli("generate --out " + n + " --seed 7 --pos 0 --neg 2 --image-size 16") == 0);
    const std::string no_pos = slurp(fs::path(n) / "index.tsv");
    CHECK(no_pos.find("\t1\t") == std::string::npos);  // no positive labels
}

TEST_CASE("train writes its artifacts and reruns byte-identically") {
    TempDir dir("sivit_cli_train");
    const std::string base =
        "train --data " + dataset_root() + tiny_train_flags() + " --epochs 2";
    const fs::path r1 = dir.path / "r1";
    const fs::path r2 = dir.path / "r2";
    REQUIRE(run_cli(base + " --out " + r1.string()) == 0);
    REQUIRE(run_cli(base + " --out " + r2.string()) == 0);

    CHECK(slurp(r1 / "metrics.csv") == slurp(r2 / "metrics.csv"));
    CHECK(slurp(r1 / "eval.csv") == slurp(r2 / "eval.csv"));
    CHECK(slurp(r1 / "best.ckpt") == slurp(r2 / "best.ckpt"));

    const std::string metrics = slurp(r1 / "metrics.csv");
    CHECK(metrics.rfind("epoch,train_loss,l_cls,l_reg_usf,l_reg_sf,val_acc,lr\n", 0) == 0);
    CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 3);  // header + 2 epochs
    const std::string eval = slurp(r1 / "eval.csv");
    CHECK(eval.rfind("split,accuracy", 0) == 0);
    CHECK(eval.find("\ntest,") != std::string::npos);

    // The manifest records the resolved run configuration.
    const std::string manifest = slurp(r1 / "manifest.json");
    CHECK(manifest.find("\"strategy\": \"si\"") != std::string::npos);
    CHECK(manifest.find("\"epochs\": 2") != std::string::npos);
    CHECK(manifest.find("\"seed\": 5") != std::string::npos);
    CHECK(manifest.find("\"tool\": \"sivit 0.1.0\"") != std::string::npos);
}

TEST_CASE("naive strategy logs zero regression losses through the CLI") {
    TempDir dir("sivit_cli_naive");
    const fs::path out = dir.path / "naive";
    REQUIRE(run_cli("train --data " + dataset_root() + tiny_train_flags() +
                    " --epochs 2 --strategy naive --out " + out.string()) == 0);
    std::ifstream in(out / "metrics.csv");
    std::string line;
    std::getline(in, line);  // header
    int rows = 0;
    while (std::getline(in, line)) {
        // epoch,train_loss,l_cls,l_reg_usf,l_reg_sf,...
        std::vector<std::string> cells;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            cells.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        REQUIRE(cells.size() == 7);
        CHECK(cells[3] == "0");
        CHECK(cells[4] == "0");
        ++rows;
    }
    CHECK(rows == 2);
}

TEST_CASE("exit codes follow the documented contract") {
    TempDir dir("sivit_cli_codes");
    const std::string out = (dir.path / "o").string();
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("--version") == 0);
    CHECK(run_cli("train --help") == 0);
    CHECK(run_cli("gradcheck --seed 2") == 0);

    CHECK(run_cli("--definitely-not-a-flag") == 2);
    CHECK(run_cli("train --data " + dataset_root() + " --out " + out +
                  " --strategy sf_only --epochs 1") == 2);
    CHECK(run_cli("train --data " + dataset_root() + " --out " + out +
                  " --head-weights 1:x:1 --epochs 1") == 2);
    CHECK(run_cli("train --data " + dataset_root() + " --out " + out +
                  " --patch-size 5 --embed-dim 8 --depth 1 --heads 2 --epochs 1"
                  " --batch-size 8 --no-augment") == 2);  // 16 % 5 != 0
    CHECK(run_cli("train --data " + (dir.path / "missing").string() + " --out " + out +
                  " --epochs 1") == 4);
    CHECK(run_cli("visualize --checkpoint " + (dir.path / "no.ckpt").string() +
                  " --data " + dataset_root() + "/test --out " + out) == 4);

    // A blown-up learning rate must surface as a numerical failure.
    CHECK(run_cli("train --data " + dataset_root() + tiny_train_flags() +
                  " --epochs 1 --lr 1e18 --out " + out) == 3);
}

TEST_CASE("sweep continues past a bad patch size") {
    TempDir dir("sivit_cli_sweep");
    const fs::path out = dir.path / "sweep";
    REQUIRE(run_cli("sweep-patch --data " + dataset_root() + tiny_train_flags() +
                    " --epochs 1 --sizes 5,4 --out " + out.string()) == 0);
    const std::string csv = slurp(out / "sweep.csv");
    CHECK(csv.rfind("patch_size,status,", 0) == 0);
    CHECK(csv.find("\n5,") != std::string::npos);
    CHECK(csv.find("not divisible") != std::string::npos);
    CHECK(csv.find("\n4,ok,") != std::string::npos);
    // The bad size reports an error row; only the good size trained.
    CHECK(fs::exists(out / "patch4" / "best.ckpt"));
    CHECK_FALSE(fs::exists(out / "patch5"));
}

TEST_CASE("visualize renders one map per sample at image resolution") {
    TempDir dir("sivit_cli_vis");
    const fs::path run = dir.path / "run";
    REQUIRE(run_cli("train --data " + dataset_root() + tiny_train_flags() +
                    " --epochs 1 --out " + run.string()) == 0);
    const fs::path maps = dir.path / "maps";
    REQUIRE(run_cli("visualize --checkpoint " + (run / "best.ckpt").string() + " --data " +
                    dataset_root() + "/test --out " + maps.string()) == 0);
    int count = 0;
    for (const auto& entry : fs::directory_iterator(maps)) {
        int w = 0, h = 0, maxval = 0;
        sivit::read_pgm(entry.path().string(), w, h, maxval);
        CHECK(w == 16);
        CHECK(h == 16);
        ++count;
    }
    CHECK(count == 8);

    const fs::path shuffled = dir.path / "maps_shuffled";
    REQUIRE(run_cli("visualize --checkpoint " + (run / "best.ckpt").string() + " --data " +
                    dataset_root() + "/test --out " + shuffled.string() +
                    " --shuffled --seed 3") == 0);
    CHECK(std::distance(fs::directory_iterator(shuffled), fs::directory_iterator{}) == 8);
}

TEST_CASE("config file values apply beneath command-line flags") {
    TempDir dir("sivit_cli_config");
    const fs::path cfg = dir.path / "run.ini";
    std::ofstream(cfg) << "[train]\nepochs = 1\nstrategy = naive\n";
    const fs::path out = dir.path / "out";
    REQUIRE(run_cli("train --config " + cfg.string() + " --data " + dataset_root() +
                    " --patch-size 4 --embed-dim 8 --depth 1 --heads 2 --batch-size 8"
                    " --no-augment --seed 5 --out " +
                    out.string()) == 0);
    const std::string manifest = slurp(out / "manifest.json");
    CHECK(manifest.find("\"epochs\": 1") != std::string::npos);
    CHECK(manifest.find("\"strategy\": \"naive\"") != std::string::npos);

    const fs::path out2 = dir.path / "out2";
    REQUIRE(run_cli("train --config " + cfg.string() + " --data " + dataset_root() +
                    " --strategy si --patch-size 4 --embed-dim 8 --depth 1 --heads 2"
                    " --batch-size 8 --no-augment --seed 5 --epochs 2 --out " +
                    out2.string()) == 0);
    const std::string manifest2 = slurp(out2 / "manifest.json");
    CHECK(manifest2.find("\"epochs\": 2") != std::string::npos);
    CHECK(manifest2.find("\"strategy\": \"si\"") != std::string::npos);
}
