#include <array>
#include <cmath>
#include <numbers>

#include "sdtn/train.hpp"

namespace sdtn::train {

namespace {

// Forward-mode value with derivatives w.r.t. the four predicted corners.
struct Dual4 {
    double v = 0.0;
    std::array<double, 4> d{};

    Dual4() = default;
    Dual4(double value) : v(value) {}  // NOLINT: constants promote implicitly
    static Dual4 seed(double value, int i) {
        Dual4 x(value);
        x.d[static_cast<std::size_t>(i)] = 1.0;
        return x;
    }
};

Dual4 operator+(Dual4 a, const Dual4& b) {
    a.v += b.v;
    for (int i = 0; i < 4; ++i) a.d[i] += b.d[i];
    return a;
}
Dual4 operator-(Dual4 a, const Dual4& b) {
    a.v -= b.v;
    for (int i = 0; i < 4; ++i) a.d[i] -= b.d[i];
    return a;
}
Dual4 operator*(const Dual4& a, const Dual4& b) {
    Dual4 r(a.v * b.v);
    for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
    return r;
}
Dual4 operator/(const Dual4& a, const Dual4& b) {
    Dual4 r(a.v / b.v);
    for (int i = 0; i < 4; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) / (b.v * b.v);
    return r;
}
// Ties pick the first argument; the derivative is a one-sided subgradient.
Dual4 dmin(const Dual4& a, const Dual4& b) { return b.v < a.v ? b : a; }
Dual4 dmax(const Dual4& a, const Dual4& b) { return b.v > a.v ? b : a; }
Dual4 datan2(const Dual4& y, const Dual4& x) {
    Dual4 r(std::atan2(y.v, x.v));
    const double n = x.v * x.v + y.v * y.v;
    if (n > 0.0)
        for (int i = 0; i < 4; ++i) r.d[i] = (x.v * y.d[i] - y.v * x.d[i]) / n;
    return r;
}

double value(double x) { return x; }
double value(const Dual4& x) { return x.v; }
double dmin(double a, double b) { return std::min(a, b); }
double dmax(double a, double b) { return std::max(a, b); }
double datan2(double y, double x) { return std::atan2(y, x); }

template <class S>
S ciou_impl(const S& px1, const S& py1, const S& px2, const S& py2, const Box& t) {
    const S zero(0.0);
    const S iw = dmax(zero, dmin(px2, S(t.x2)) - dmax(px1, S(t.x1)));
    const S ih = dmax(zero, dmin(py2, S(t.y2)) - dmax(py1, S(t.y1)));
    const S inter = iw * ih;
    const S pw = px2 - px1, ph = py2 - py1;
    const S uni = pw * ph + S(t.area()) - inter;
    const S iou = value(uni) > 0.0 ? inter / uni : zero;

    const S cw = dmax(px2, S(t.x2)) - dmin(px1, S(t.x1));
    const S ch = dmax(py2, S(t.y2)) - dmin(py1, S(t.y1));
    const S c2 = cw * cw + ch * ch;
    if (!(value(c2) > 0.0)) return zero;
    const S dx = (px1 + px2 - S(t.x1 + t.x2)) * S(0.5);
    const S dy = (py1 + py2 - S(t.y1 + t.y2)) * S(0.5);
    const S rho2 = dx * dx + dy * dy;

    const S dtheta = datan2(S(t.width()), S(t.height())) - datan2(pw, ph);
    const S v = S(4.0 / (std::numbers::pi * std::numbers::pi)) * dtheta * dtheta;
    const S denom = S(1.0) - iou + v;
    const S alpha_v = value(denom) > 0.0 ? v * v / denom : zero;
    return iou - rho2 / c2 - alpha_v;
}

}  // namespace

double ciou(const Box& p, const Box& t) {
    return ciou_impl<double>(p.x1, p.y1, p.x2, p.y2, t);
}

CiouGrad ciou_with_grad(const Box& p, const Box& t) {
    const Dual4 r = ciou_impl<Dual4>(Dual4::seed(p.x1, 0), Dual4::seed(p.y1, 1), Dual4::seed(p.x2, 2),
                                     Dual4::seed(p.y2, 3), t);
    return {r.v, r.d};
}

}  // namespace sdtn::train
