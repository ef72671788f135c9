// End-to-end exercise of the dmch binary: dataset generation, a short
// training run, embedding, querying, evaluation, attention export, the scan
// benchmark, and the exit-code contract.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "dmch/embedding.hpp"
#include "dmch/model.hpp"
#include "dmch/synth.hpp"

namespace fs = std::filesystem;

namespace {

int failures = 0;

void check(bool ok, const std::string& what) {
    if (ok) {
        std::cout << "  ok: " << what << "\n";
    } else {
        ++failures;
        std::cout << "  FAIL: " << what << "\n";
    }
}

int run_cmd(const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    return status < 0 ? status : WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

} // namespace

int main() {
    const std::string cli = DMCH_CLI_PATH;
    const fs::path work = fs::temp_directory_path() / "dmch_cli_test";
    fs::remove_all(work);
    fs::create_directories(work);
    const std::string data = (work / "data").string();
    const std::string stem = (work / "model").string();
    const std::string codefile = (work / "shop.dmchcode").string();
    const std::string out = (work / "out.txt").string();

    // --- gen-data -----------------------------------------------------------
    check(run_cmd(cli + " gen-data --out " + data + " --products 3 --images-per-product 2 --seed 5 --size 16 > " + out) == 0,
          "gen-data succeeds");
    check(fs::exists(data + "/manifest.tsv"), "manifest written");
    const std::string manifest_bytes = slurp(data + "/manifest.tsv");
    check(run_cmd(cli + " gen-data --out " + data + " --products 3 --images-per-product 2 --seed 5 --size 16 > " + out) == 0,
          "gen-data rerun succeeds");
    check(slurp(data + "/manifest.tsv") == manifest_bytes, "gen-data rerun is byte-identical");

    // --- train ---------------------------------------------------------------
    const std::string train_flags =
        " --hidden 6 --embed-dim 4 --batch 4 --ratio 1 --epochs 3 --code-bits 32"
        " --image-size 16 --conv1-channels 2 --conv2-channels 3 --seed 5 --lr 0.02 --max-len 5";
    check(run_cmd(cli + " train --manifest " + data + "/manifest.tsv --out " + stem + train_flags + " > " + out) == 0,
          "train succeeds");
    check(fs::exists(stem + ".ckpt") && fs::exists(stem + ".meta") && fs::exists(stem + ".vocab"),
          "checkpoint files written");
    check(fs::exists(stem + ".log") && slurp(stem + ".log").find("epoch") == 0, "training log written");

    // --- embed ---------------------------------------------------------------
    check(run_cmd(cli + " embed --checkpoint " + stem + ".ckpt --manifest " + data + "/manifest.tsv --out " +
                  codefile + " > " + out) == 0,
          "embed succeeds");
    const std::string code_bytes = slurp(codefile);
    check(run_cmd(cli + " embed --checkpoint " + stem + ".ckpt --manifest " + data + "/manifest.tsv --out " +
                  codefile + " > " + out) == 0,
          "embed rerun succeeds");
    check(slurp(codefile) == code_bytes, "embed rerun is byte-identical");

    // file contents match the in-process embedding path bit-exactly
    {
        dmch::DmchModel model = dmch::DmchModel::load(stem);
        auto manifest = dmch::synth::load_manifest(data + "/manifest.tsv");
        auto codes = dmch::load_codes(codefile);
        check(codes.code_length == 32, "codefile declares the configured code length");
        bool all_match = !codes.entries.empty();
        for (const auto& entry : codes.entries) {
            for (const auto& r : manifest.records) {
                if (r.path != entry.item_id) continue;
                auto img = dmch::load_image(manifest.resolve(r), r.domain, r.path);
                if (!(model.infer(img).code == entry.code)) all_match = false;
            }
        }
        check(all_match, "codefile entries equal in-process binarize(fuse_embed(...))");
    }

    // --- query ---------------------------------------------------------------
    // querying a shop image that is in the database returns itself at rank 1
    std::string shop_image;
    {
        auto manifest = dmch::synth::load_manifest(data + "/manifest.tsv");
        for (const auto& r : manifest.records)
            if (r.domain == dmch::Domain::shop) {
                shop_image = manifest.resolve(r);
                break;
            }
    }
    check(run_cmd(cli + " query --checkpoint " + stem + ".ckpt --codefile " + codefile + " --image " +
                  shop_image + " --k 3 > " + out) == 0,
          "query succeeds");
    {
        const std::string text = slurp(out);
        check(text.find("attributes:") != std::string::npos, "query prints decoded attributes");
        // rank-1 line: "1\tshop_..." with distance 0
        check(text.find("1\tshop_") != std::string::npos && text.find("\t0\n") != std::string::npos,
              "shop image retrieves itself at distance 0");
        const std::string text2_path = (work / "out2.txt").string();
        run_cmd(cli + " query --checkpoint " + stem + ".ckpt --codefile " + codefile + " --image " +
                shop_image + " --k 3 > " + text2_path);
        check(slurp(text2_path) == text, "query output is stable across runs");
    }

    // --- eval-retrieval -------------------------------------------------------
    check(run_cmd(cli + " eval-retrieval --checkpoint " + stem + ".ckpt --codefile " + codefile +
                  " --manifest " + data + "/manifest.tsv --k 1 2 3 > " + out) == 0,
          "eval-retrieval succeeds");
    {
        std::ifstream is(out);
        std::string line;
        std::getline(is, line); // queries count
        double prev = -1.0;
        bool monotone = true;
        while (std::getline(is, line)) {
            const auto tab = line.find('\t');
            if (tab == std::string::npos) continue;
            const double v = std::stod(line.substr(tab + 1));
            if (v < prev) monotone = false;
            prev = v;
        }
        check(monotone, "P@K is nondecreasing in K");
    }

    // --- eval-attr -------------------------------------------------------------
    check(run_cmd(cli + " eval-attr --checkpoint " + stem + ".ckpt --manifest " + data +
                  "/manifest.tsv --split test --max-len 5 > " + out) == 0,
          "eval-attr succeeds");
    check(slurp(out).find("B-1") != std::string::npos, "eval-attr prints the metric table");

    // --- attn-export ------------------------------------------------------------
    const std::string attn_csv = (work / "attn.csv").string();
    check(run_cmd(cli + " attn-export --checkpoint " + stem + ".ckpt --image " + shop_image + " --out " +
                  attn_csv + " --max-len 4 > " + out) == 0,
          "attn-export succeeds");
    {
        std::ifstream is(attn_csv);
        std::string header, row;
        std::getline(is, header);
        std::getline(is, row);
        check(header.rfind("0,", 0) == 0, "attention export starts with a step,beta header");
        check(std::count(row.begin(), row.end(), ',') == 1, "alpha rows have grid_w columns"); // 16px -> 2x2
    }

    // --- bench (tiny) ------------------------------------------------------------
    check(run_cmd(cli + " bench --entries 200 --queries 10 --reps 2 > " + out) == 0, "bench succeeds");
    check(slurp(out).find("speedup") != std::string::npos, "bench prints a speedup line");

    // --- exit-code contract --------------------------------------------------------
    check(run_cmd(cli + " query --checkpoint " + stem + ".ckpt --codefile /nonexistent.dmchcode --image " +
                  shop_image + " 2> /dev/null") == 4,
          "missing file exits with the I/O code");
    check(run_cmd(cli + " train --manifest " + data + "/manifest.tsv --out " + stem +
                  " --code-bits 47 2> /dev/null") == 2,
          "invalid configuration exits with the config code");
    {
        const std::string bad_manifest = (work / "bad.tsv").string();
        std::ofstream os(bad_manifest);
        os << "only_two\tfields\n";
        os.close();
        check(run_cmd(cli + " train --manifest " + bad_manifest + " --out " + stem + " 2> /dev/null") == 3,
              "malformed manifest exits with the data code");
    }

    std::cout << (failures == 0 ? "CLI pipeline: all checks passed\n"
                                : "CLI pipeline: " + std::to_string(failures) + " checks FAILED\n");
    fs::remove_all(work);
    return failures == 0 ? 0 : 1;
}
