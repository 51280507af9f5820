#include "advlab/history.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "advlab/errors.hpp"

namespace advlab {

void RunHistory::validate() const {
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto& r = epochs[i];
    if (r.epoch != static_cast<int>(i) + 1) throw ContractError("history: epoch indices must run 1,2,...");
    for (double acc : {r.std_acc, r.fgsm_acc, r.pgd_acc}) {
      // NaN marks a metric that was not measured.
      if (!std::isnan(acc) && !(acc >= 0.0 && acc <= 100.0)) throw ContractError("history: accuracy outside [0,100]");
    }
  }
}

std::string history_to_csv(const RunHistory& history) {
  std::string out = kHistoryCsvHeader;
  out += '\n';
  char line[256];
  for (const auto& r : history.epochs) {
    // %.17g keeps every double exactly, so the CSV round-trips.
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.std_acc,
                  r.fgsm_acc, r.pgd_acc, r.local_linearity, r.lr);
    out += line;
  }
  return out;
}

RunHistory history_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kHistoryCsvHeader) throw FormatError("history csv: bad header");
  RunHistory h;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    EpochRecord r;
    int consumed = 0;
    const int got = std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf,%lf%n", &r.epoch, &r.train_loss, &r.std_acc,
                                &r.fgsm_acc, &r.pgd_acc, &r.local_linearity, &r.lr, &consumed);
    if (got != 7 || static_cast<std::size_t>(consumed) != line.size()) {
      throw FormatError("history csv: malformed line " + std::to_string(lineno));
    }
    h.epochs.push_back(r);
  }
  try {
    h.validate();
  } catch (const ContractError& e) {
    throw FormatError(std::string("history csv: ") + e.what());
  }
  return h;
}

}  // namespace advlab
