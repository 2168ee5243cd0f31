#include <cmath>
#include <cstdio>
#include <filesystem>

#include "sift/eval.hpp"

namespace sift::eval {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

constexpr double kW = 640, kH = 400, kL = 60, kR = 20, kT = 30, kB = 50;

struct Svg {
  std::string body;

  explicit Svg(std::string_view title) {
    body += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kW) + "\" height=\"" + num(kH) + "\">\n";
    body += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    text(kW / 2, 18, title, "middle");
    body += "<line x1=\"" + num(kL) + "\" y1=\"" + num(kH - kB) + "\" x2=\"" + num(kW - kR) + "\" y2=\"" +
            num(kH - kB) + "\" stroke=\"black\"/>\n";
    body += "<line x1=\"" + num(kL) + "\" y1=\"" + num(kT) + "\" x2=\"" + num(kL) + "\" y2=\"" + num(kH - kB) +
            "\" stroke=\"black\"/>\n";
  }
  void text(double x, double y, std::string_view s, std::string_view anchor = "start") {
    body += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-size=\"12\" font-family=\"sans-serif\" text-anchor=\"" +
            std::string(anchor) + "\">" + xml_escape(s) + "</text>\n";
  }
  void rect(double x, double y, double w, double h, std::string_view fill) {
    body += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) + "\" height=\"" + num(h) +
            "\" fill=\"" + std::string(fill) + "\"/>\n";
  }
  void yrange(double lo, double hi) {
    text(kL - 6, kH - kB + 4, num(lo), "end");
    text(kL - 6, kT + 4, num(hi), "end");
  }
  std::string done() { return body + "</svg>\n"; }
};

const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"};

std::string loss_curve_svg(const training::RunLedger* ledger) {
  Svg svg("training loss");
  if (ledger == nullptr || ledger->steps().empty()) {
    svg.text(kW / 2, kH / 2, "no steps", "middle");
    return svg.done();
  }
  const auto& steps = ledger->steps();
  double lo = steps.front().loss, hi = lo;
  for (const auto& s : steps) {
    lo = std::min(lo, s.loss);
    hi = std::max(hi, s.loss);
  }
  if (hi == lo) hi = lo + 1.0;
  const double n = static_cast<double>(steps.size());
  auto px = [&](std::size_t i) { return kL + (kW - kL - kR) * (n > 1 ? static_cast<double>(i) / (n - 1) : 0.5); };
  auto py = [&](double v) { return kH - kB - (kH - kT - kB) * (v - lo) / (hi - lo); };
  std::string pts;
  for (std::size_t i = 0; i < steps.size(); ++i) pts += num(px(i)) + "," + num(py(steps[i].loss)) + " ";
  svg.body += "<polyline fill=\"none\" stroke=\"" + std::string(kColors[0]) + "\" points=\"" + pts + "\"/>\n";
  for (std::size_t i = 0; i < steps.size(); ++i)
    svg.body += "<circle cx=\"" + num(px(i)) + "\" cy=\"" + num(py(steps[i].loss)) + "\" r=\"1.2\"/>\n";
  svg.yrange(lo, hi);
  svg.text(kW / 2, kH - 15, "step (" + std::to_string(steps.size()) + " points)", "middle");
  return svg.done();
}

std::string distance_hist_svg(const std::vector<std::pair<std::string, AlignmentReport>>& reports) {
  Svg svg("alignment distance");
  constexpr int kBins = 20;
  double hi = 0.0;
  for (const auto& [label, r] : reports)
    for (const auto& it : r.items) hi = std::max(hi, it.distance);
  if (hi <= 0.0) hi = 1.0;
  std::vector<std::vector<int>> counts;
  int peak = 1;
  for (const auto& [label, r] : reports) {
    std::vector<int> c(kBins, 0);
    for (const auto& it : r.items) {
      const int b = std::min(kBins - 1, static_cast<int>(it.distance / hi * kBins));
      peak = std::max(peak, ++c[static_cast<std::size_t>(b)]);
    }
    counts.push_back(std::move(c));
  }
  const double bw = (kW - kL - kR) / kBins;
  const double sub = counts.empty() ? bw : bw / static_cast<double>(counts.size());
  for (std::size_t s = 0; s < counts.size(); ++s) {
    for (int b = 0; b < kBins; ++b) {
      const double h = (kH - kT - kB) * counts[s][static_cast<std::size_t>(b)] / peak;
      svg.rect(kL + b * bw + static_cast<double>(s) * sub, kH - kB - h, sub, h, kColors[s % 5]);
    }
    svg.text(kW - kR - 150, kT + 14 + 14 * static_cast<double>(s), reports[s].first);
    svg.rect(kW - kR - 162, kT + 5 + 14 * static_cast<double>(s), 9, 9, kColors[s % 5]);
  }
  svg.yrange(0, peak);
  svg.text(kL, kH - 15, "0");
  svg.text(kW - kR, kH - 15, num(hi), "end");
  return svg.done();
}

std::string probe_svg(const std::vector<ProbeResult>& probes) {
  Svg svg("attribute probe accuracy");
  const double gw = probes.empty() ? 0.0 : (kW - kL - kR) / static_cast<double>(probes.size());
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const auto& p = probes[i];
    const double x = kL + gw * static_cast<double>(i);
    const double vals[3] = {p.train_accuracy, p.heldout_accuracy, p.chance};
    for (int k = 0; k < 3; ++k) {
      const double h = (kH - kT - kB) * vals[k];
      svg.rect(x + gw * (0.1 + 0.27 * k), kH - kB - h, gw * 0.25, h, kColors[k]);
    }
    svg.text(x + gw / 2, kH - kB + 16, p.attribute, "middle");
  }
  const char* names[3] = {"train", "held-out", "chance"};
  for (int k = 0; k < 3; ++k) {
    svg.rect(kW - kR - 100, kT + 5 + 14 * k, 9, 9, kColors[k]);
    svg.text(kW - kR - 88, kT + 14 + 14 * k, names[k]);
  }
  svg.yrange(0, 1);
  return svg.done();
}

}  // namespace

std::vector<std::string> emit_report(const ReportBundle& bundle, const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  const std::filesystem::path dir(out_dir);
  std::vector<std::string> written;
  auto put = [&](const char* name, const std::string& content) {
    const std::string p = (dir / name).string();
    write_file(p, content);
    written.push_back(p);
  };

  std::string ledger = "step,stage,loss,masked_tokens,correct_tokens,lr,grad_norm_semantic,grad_norm_paralinguistic\n";
  if (bundle.ledger != nullptr)
    for (const auto& s : bundle.ledger->steps()) {
      auto g = [&](ParamGroup k) {
        auto it = s.grad_norms.find(k);
        return it == s.grad_norms.end() ? std::string() : num(it->second);
      };
      ledger += std::to_string(s.step) + "," + csv_field(s.stage) + "," + num(s.loss) + "," +
                std::to_string(s.masked_tokens) + "," + std::to_string(s.correct_tokens) + "," + num(s.lr) + "," +
                g(ParamGroup::proj_semantic) + "," + g(ParamGroup::proj_paralinguistic) + "\n";
    }
  put("ledger.csv", ledger);

  std::string align = "label,record_id,config_tag,distance,target_ce,target_tokens,correct_tokens,greedy_match\n";
  for (const auto& [label, r] : bundle.alignment)
    for (const auto& it : r.items)
      align += csv_field(label) + "," + csv_field(it.record_id) + "," + it.config_tag + "," + num(it.distance) + "," +
               num(it.target_ce) + "," + std::to_string(it.target_tokens) + "," + std::to_string(it.correct_tokens) +
               "," + (it.greedy_match ? "1" : "0") + "\n";
  put("alignment.csv", align);

  std::string probes = "attribute,train_accuracy,heldout_accuracy,chance,n_train,n_heldout\n";
  for (const auto& p : bundle.probes)
    probes += csv_field(p.attribute) + "," + num(p.train_accuracy) + "," + num(p.heldout_accuracy) + "," +
              num(p.chance) + "," + std::to_string(p.n_train) + "," + std::to_string(p.n_heldout) + "\n";
  put("probes.csv", probes);

  std::string gen = "record_id,instruction,reference,text,finish_reason,exact,token_accuracy\n";
  if (bundle.generation != nullptr)
    for (const auto& r : bundle.generation->results)
      gen += csv_field(r.item.record_id) + "," + csv_field(r.item.instruction.value_or("")) + "," +
             csv_field(r.item.reference.value_or("")) + "," + csv_field(r.text) + "," + r.finish_reason + "," +
             (r.exact ? (*r.exact ? "1" : "0") : "") + "," + (r.token_accuracy ? num(*r.token_accuracy) : "") + "\n";
  put("generation.csv", gen);

  std::string judge = "record_id,score,flagged\n";
  if (bundle.judge == nullptr) {
    judge += "skipped,,\n";
  } else {
    for (const auto& it : bundle.judge->items)
      judge += csv_field(it.record_id) + "," + (it.score ? std::to_string(*it.score) : "") + "," +
               (it.flagged ? "1" : "0") + "\n";
  }
  put("judge.csv", judge);

  put("loss_curve.svg", loss_curve_svg(bundle.ledger));
  put("distance_hist.svg", distance_hist_svg(bundle.alignment));
  put("probe_accuracy.svg", probe_svg(bundle.probes));
  return written;
}

std::size_t count_svg_points(std::string_view svg) {
  std::size_t n = 0;
  for (std::size_t pos = svg.find("<circle"); pos != std::string_view::npos; pos = svg.find("<circle", pos + 1)) ++n;
  return n;
}

}  // namespace sift::eval
