#pragma once

// K_1(x) evaluated with mpmath at 50 significant digits (rounded to 22 here).
// Regenerate: python3 -c "import mpmath as mp; mp.mp.dps=50; print(mp.besselk(1, x))"

#include <array>
#include <utility>

namespace mlqmc::oracles {

inline constexpr std::array<std::pair<double, double>, 27> kBesselK1Table{{
    {0.000001, 999999.9999927842789632},
    {0.0001, 9999.999508686404957253},
    {0.001, 999.996238156085574278},
    {0.01, 99.97389411829624764304},
    {0.05, 19.90967432588250651069},
    {0.1, 9.853844780870606134849},
    {0.25, 3.747025974440711638034},
    {0.5, 1.656441120003300893696},
    {0.75, 0.9495804669621402321778},
    {1.0, 0.6019072301972345747375},
    {1.414213562373095048802, 0.3141976116298978527931},
    {1.5, 0.2773878004568438160854},
    {1.99, 0.141717561622401305364},
    {2.0, 0.1398658818165224272846},
    {2.01, 0.1380408773192076667119},
    {2.5, 0.07389081634774706364899},
    {3.0, 0.04015643112819418437671},
    {4.0, 0.01248349888726843147038},
    {5.0, 0.004044613445452164208365},
    {7.5, 0.0002652973901252895259879},
    {10.0, 0.00001864877345382558459682},
    {15.0, 1.014172936976209181e-7},
    {20.0, 5.88305796955703817765e-10},
    {30.0, 2.167732001891549424867e-14},
    {50.0, 3.444102226717555612592e-23},
    {100.0, 4.679853735636909286563e-45},
    {300.0, 3.729895858332372698577e-132},
}};

// sqrt(2) * K_1(sqrt(2)): Matern nu = 1, lambda = 1, sigma^2 = 1 at unit lag.
inline constexpr double kMaternNu1UnitLag = 0.4443425236322360413391;

}  // namespace mlqmc::oracles
