// purefed CLI: one experiment run by default, `suite` for arm x seed grids.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "purefed/experiment.hpp"

namespace {

void print_error(const char* stage, const std::string& what) {
  std::fprintf(stderr, "{\"error\":\"%s\",\"detail\":\"", stage);
  for (const char c : what) {
    if (c == '"' || c == '\\') std::fputc('\\', stderr);
    if (c == '\n') {
      std::fputs("\\n", stderr);
      continue;
    }
    std::fputc(c, stderr);
  }
  std::fputs("\"}\n", stderr);
}

std::string show(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  purefed::cli::CliResult parsed;
  try {
    parsed = purefed::cli::parse_cli(std::vector<std::string>(argv + 1, argv + argc));
  } catch (const purefed::cli::ConfigError& e) {
    print_error("config", e.what());
    return 2;
  }
  if (parsed.help_requested) {
    std::printf("%s", parsed.help_text.c_str());
    return 0;
  }

  try {
    if (parsed.is_suite) {
      const auto rows = purefed::cli::run_suite(parsed.cfg, parsed.arms, parsed.seeds);
      std::printf("%-18s %-10s %-7s %-8s %-8s %-8s %-8s\n", "arm", "seed", "status",
                  "gm_all", "gm_few", "pm_all", "balance");
      for (const auto& row : rows) {
        if (row.ok) {
          std::printf("%-18s %-10llu %-7s %-8s %-8s %-8s %-8.4f\n", row.arm.c_str(),
                      static_cast<unsigned long long>(row.seed), "ok",
                      show(row.summary.final_gm.all).c_str(),
                      show(row.summary.final_gm.few).c_str(),
                      show(row.summary.final_pm.all).c_str(),
                      row.summary.final_gm_balancedness);
        } else {
          std::printf("%-18s %-10llu %-7s %s\n", row.arm.c_str(),
                      static_cast<unsigned long long>(row.seed), "failed",
                      row.error.c_str());
        }
      }
      std::printf("suite table: %s/suite.csv\n", parsed.cfg.out.c_str());
      for (const auto& row : rows) {
        if (!row.ok) return 1;
      }
      return 0;
    }

    const auto result = purefed::cli::run_experiment(parsed.cfg);
    const auto& s = result.summary;
    std::printf("arm=%s seed=%llu rounds=%d\n", s.arm.c_str(),
                static_cast<unsigned long long>(s.seed), parsed.cfg.rounds);
    std::printf("zero-shot gm: all=%s many=%s medium=%s few=%s balancedness=%.4f\n",
                show(s.zero_shot_gm.all).c_str(), show(s.zero_shot_gm.many).c_str(),
                show(s.zero_shot_gm.medium).c_str(), show(s.zero_shot_gm.few).c_str(),
                s.zero_shot_balancedness);
    std::printf("final gm:     all=%s many=%s medium=%s few=%s balancedness=%.4f\n",
                show(s.final_gm.all).c_str(), show(s.final_gm.many).c_str(),
                show(s.final_gm.medium).c_str(), show(s.final_gm.few).c_str(),
                s.final_gm_balancedness);
    std::printf("final pm:     all=%s many=%s medium=%s few=%s balancedness=%s\n",
                show(s.final_pm.all).c_str(), show(s.final_pm.many).c_str(),
                show(s.final_pm.medium).c_str(), show(s.final_pm.few).c_str(),
                show(s.final_pm_balancedness).c_str());
    std::printf("local tests:  gm=%s pm=%s\n", show(s.gm_local_mean_acc).c_str(),
                show(s.pm_local_mean_acc).c_str());
    std::printf("outputs: %s\n", parsed.cfg.out.c_str());
    return 0;
  } catch (const std::exception& e) {
    print_error("run", e.what());
    return 1;
  }
}
