#include "sentimtl/report.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>

#include "sentimtl/error.hpp"

namespace sentimtl {

std::string format_weight_table(const std::vector<TrajectoryRow>& rows, std::size_t every) {
  if (every == 0) throw RangeError("table stride must be positive");
  std::string out = fmt::format("{:>8} {:>6} {:>6} {:>6} {:>10} {:>10} {:>10} {:>9} {:>9} {:>9}\n",
                                "step", "w_p", "w_a", "w_o", "sigma2_p", "sigma2_a", "sigma2_o",
                                "L_p", "L_a", "L_o");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i % every != 0 && i + 1 != rows.size()) continue;
    const auto& r = rows[i];
    const TaskVector w = round_weights(r.weights);
    out += fmt::format("{:>8} {:>6.2f} {:>6.2f} {:>6.2f} {:>10.4f} {:>10.4f} {:>10.4f} {:>9.4f} {:>9.4f} {:>9.4f}\n",
                       r.step, w[0], w[1], w[2], r.variances[0], r.variances[1], r.variances[2],
                       r.losses[0], r.losses[1], r.losses[2]);
  }
  return out;
}

std::string weight_plot_svg(const std::vector<TrajectoryRow>& rows) {
  constexpr double width = 640, height = 360, left = 50, right = 110, top = 20, bottom = 40;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  const double max_step = rows.empty() ? 1.0 : std::max<double>(1.0, static_cast<double>(rows.back().step));
  const char* colors[kNumTasks] = {"#1f77b4", "#d62728", "#2ca02c"};
  const char* names[kNumTasks] = {"polarity", "aspect", "opinion"};

  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
      "font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      width, height);
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", left, top,
                     top + plot_h);
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", left,
                     top + plot_h, left + plot_w);
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = tick * 0.25;
    const double y = top + plot_h * (1.0 - v);
    svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.2f}</text>\n", left - 6, y + 4, v);
  }
  svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">step</text>\n", left + plot_w / 2,
                     height - 8);
  svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", left + plot_w,
                     top + plot_h + 16, static_cast<std::size_t>(max_step));
  for (std::size_t k = 0; k < kNumTasks; ++k) {
    std::string points;
    for (const auto& r : rows) {
      const double x = left + plot_w * static_cast<double>(r.step) / max_step;
      const double y = top + plot_h * (1.0 - std::clamp(r.weights[k], 0.0, 1.0));
      points += fmt::format("{:.2f},{:.2f} ", x, y);
    }
    svg += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                       colors[k], points);
    const double ly = top + 14.0 + 18.0 * static_cast<double>(k);
    svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"{3}\" stroke-width=\"2\"/>\n",
                       left + plot_w + 10, ly, left + plot_w + 30, colors[k]);
    svg += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", left + plot_w + 36, ly + 4, names[k]);
  }
  svg += "</svg>\n";
  return svg;
}

void write_weight_plot(const std::vector<TrajectoryRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write plot '{}'", path.string()));
  out << weight_plot_svg(rows);
}

std::string format_eval(const EvalResult& r) {
  std::string out = fmt::format("n_all={} n_implicit={}\n", r.n_all, r.n_implicit);
  out += fmt::format("All_A={:.2f} All_F={:.2f}\n", 100.0 * r.all.accuracy, 100.0 * r.all.macro_f1);
  if (r.isa)
    out += fmt::format("ISA_A={:.2f} ISA_F={:.2f}\n", 100.0 * r.isa->accuracy, 100.0 * r.isa->macro_f1);
  else
    out += "ISA_A=absent ISA_F=absent\n";
  out += "confusion (rows gold, cols pred: positive negative neutral)\n";
  for (std::size_t g = 0; g < kNumPolarities; ++g) {
    out += fmt::format("{:>9}", to_string(kPolarities[g]));
    for (std::size_t p = 0; p < kNumPolarities; ++p) out += fmt::format(" {:>6}", r.confusion[g][p]);
    out += '\n';
  }
  return out;
}

}  // namespace sentimtl
