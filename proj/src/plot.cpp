#include "desco/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "desco/volume_io.hpp"

namespace desco::plot {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string escape(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        default: out += c;
        }
    }
    return out;
}

struct Frame {
    int width, height;
    double left = 70, right = 160, top = 40, bottom = 50;
    double x0, x1, y0, y1;

    double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
    double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }
};

std::string header(int w, int h, const std::string& title)
{
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) + "\" height=\"" +
           std::to_string(h) + "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n" +
           "<text x=\"" + std::to_string(w / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
           escape(title) + "</text>\n";
}

std::string axes(const Frame& f, const std::string& x_label)
{
    std::string s;
    const double xl = f.left, xr = f.width - f.right, yb = f.height - f.bottom, yt = f.top;
    s += "<line x1=\"" + num(xl) + "\" y1=\"" + num(yb) + "\" x2=\"" + num(xr) + "\" y2=\"" + num(yb) + "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + num(xl) + "\" y1=\"" + num(yb) + "\" x2=\"" + num(xl) + "\" y2=\"" + num(yt) + "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double yv = f.y0 + (f.y1 - f.y0) * k / 4.0, xv = f.x0 + (f.x1 - f.x0) * k / 4.0;
        s += "<text x=\"" + num(xl - 6) + "\" y=\"" + num(f.py(yv) + 4) + "\" text-anchor=\"end\">" + num(yv) + "</text>\n";
        s += "<line x1=\"" + num(xl) + "\" y1=\"" + num(f.py(yv)) + "\" x2=\"" + num(xr) + "\" y2=\"" + num(f.py(yv)) +
             "\" stroke=\"#dddddd\"/>\n";
        if (!x_label.empty())
            s += "<text x=\"" + num(f.px(xv)) + "\" y=\"" + num(yb + 16) + "\" text-anchor=\"middle\">" + num(xv) + "</text>\n";
    }
    if (!x_label.empty())
        s += "<text x=\"" + num((xl + xr) / 2) + "\" y=\"" + num(f.height - 10.0) + "\" text-anchor=\"middle\">" +
             escape(x_label) + "</text>\n";
    return s;
}

} // namespace

std::string line_chart(const std::string& title, const std::string& x_label, const std::vector<Series>& series,
                       int width, int height)
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    double x0 = inf, x1 = -inf, y0 = inf, y1 = -inf;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
            if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
                x0 = std::min(x0, s.x[i]);
                x1 = std::max(x1, s.x[i]);
                y0 = std::min(y0, s.y[i]);
                y1 = std::max(y1, s.y[i]);
            }
    if (!std::isfinite(x0)) {
        x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    }
    if (x1 == x0)
        x1 = x0 + 1;
    if (y1 == y0) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    const Frame f{width, height, 70, 160, 40, 50, x0, x1, y0, y1};
    std::string svg = header(width, height, title) + axes(f, x_label);
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = kPalette[k % std::size(kPalette)];
        std::string pts;
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
            if (std::isfinite(s.x[i]) && std::isfinite(s.y[i]))
                pts += num(f.px(s.x[i])) + "," + num(f.py(s.y[i])) + " ";
        svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
        const double ly = f.top + 16.0 * double(k) + 8;
        svg += "<line x1=\"" + num(width - f.right + 10) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(width - f.right + 30) +
               "\" y2=\"" + num(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
        svg += "<text x=\"" + num(width - f.right + 35) + "\" y=\"" + num(ly + 4) + "\">" + escape(s.name) + "</text>\n";
    }
    return svg + "</svg>\n";
}

std::string bar_chart(const std::string& title, const std::vector<Bar>& bars, int width, int height)
{
    double y1 = 0;
    for (const auto& b : bars)
        if (std::isfinite(b.value))
            y1 = std::max(y1, b.value + (std::isfinite(b.error) ? b.error : 0.0));
    if (y1 <= 0)
        y1 = 1;
    const Frame f{width, height, 70, 30, 40, 50, 0, double(std::max<std::size_t>(bars.size(), 1)), 0, y1 * 1.1};
    std::string svg = header(width, height, title) + axes(f, "");
    for (std::size_t k = 0; k < bars.size(); ++k) {
        const auto& b = bars[k];
        const double xl = f.px(double(k) + 0.15), xr = f.px(double(k) + 0.85);
        const double v = std::isfinite(b.value) ? b.value : 0.0;
        svg += "<rect x=\"" + num(xl) + "\" y=\"" + num(f.py(v)) + "\" width=\"" + num(xr - xl) + "\" height=\"" +
               num(f.py(0) - f.py(v)) + "\" fill=\"" + kPalette[k % std::size(kPalette)] + "\"/>\n";
        if (std::isfinite(b.error) && b.error > 0) {
            const double xc = (xl + xr) / 2;
            svg += "<line x1=\"" + num(xc) + "\" y1=\"" + num(f.py(v - b.error)) + "\" x2=\"" + num(xc) + "\" y2=\"" +
                   num(f.py(v + b.error)) + "\" stroke=\"black\"/>\n";
        }
        svg += "<text x=\"" + num((xl + xr) / 2) + "\" y=\"" + num(height - f.bottom + 16) + "\" text-anchor=\"middle\">" +
               escape(b.label) + "</text>\n";
        svg += "<text x=\"" + num((xl + xr) / 2) + "\" y=\"" + num(f.py(v) - 4) + "\" text-anchor=\"middle\">" +
               (std::isfinite(b.value) ? num(b.value) : std::string("n/a")) + "</text>\n";
    }
    return svg + "</svg>\n";
}

std::vector<std::filesystem::path> plot_history(const std::vector<HistoryRow>& rows, const std::filesystem::path& out_dir,
                                                const std::string& prefix)
{
    std::filesystem::create_directories(out_dir);
    auto column = [&](auto get, bool val_only) {
        Series s;
        for (const auto& r : rows) {
            const std::optional<double> v = get(r);
            if (val_only && !v)
                continue;
            s.x.push_back(r.iter);
            s.y.push_back(v ? *v : std::numeric_limits<double>::quiet_NaN());
        }
        return s;
    };
    auto named = [](Series s, std::string n) {
        s.name = std::move(n);
        return s;
    };
    using O = std::optional<double>;
    std::vector<std::filesystem::path> written;

    const std::vector<Series> losses = {
        named(column([](const HistoryRow& r) { return O(r.loss_sup_a); }, false), "loss_sup_a"),
        named(column([](const HistoryRow& r) { return O(r.loss_sup_b); }, false), "loss_sup_b"),
        named(column([](const HistoryRow& r) { return O(r.loss_cross_a); }, false), "loss_cross_a"),
        named(column([](const HistoryRow& r) { return O(r.loss_cross_b); }, false), "loss_cross_b"),
    };
    written.push_back(out_dir / (prefix + "_losses.svg"));
    io::write_text(line_chart("Training losses", "iteration", losses), written.back());

    const std::vector<Series> sched = {
        named(column([](const HistoryRow& r) { return O(r.alpha); }, false), "alpha"),
        named(column([](const HistoryRow& r) { return O(r.lambda); }, false), "lambda"),
        named(column([](const HistoryRow& r) { return O(r.lr * 100.0); }, false), "lr x100"),
        named(column([](const HistoryRow& r) { return O(r.mask_frac); }, false), "mask_frac"),
    };
    written.push_back(out_dir / (prefix + "_schedules.svg"));
    io::write_text(line_chart("Schedules", "iteration", sched), written.back());

    const std::vector<Series> val = {
        named(column([](const HistoryRow& r) { return r.val_dice_a; }, true), "val_dice_a"),
        named(column([](const HistoryRow& r) { return r.val_dice_b; }, true), "val_dice_b"),
        named(column([](const HistoryRow& r) { return r.val_dice_ens; }, true), "val_dice_ens"),
    };
    written.push_back(out_dir / (prefix + "_val_dice.svg"));
    io::write_text(line_chart("Validation Dice", "iteration", val), written.back());
    return written;
}

} // namespace desco::plot
