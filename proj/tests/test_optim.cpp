#include <cmath>

#include "ag/optim.hpp"
#include "doctest.h"

using ag::Arr;

TEST_SUITE("optim") {

TEST_CASE("zero gradient leaves parameters untouched") {
    Arr<double> p({3}, {1.0, -2.0, 0.5});
    Arr<double> g({3});
    ag::RmsPropState<double> st;
    ag::RmsPropConfig<double> cfg;
    cfg.lr = 0.1;
    ag::rmsprop_step<double>({&p}, {&g}, st, cfg);
    CHECK(p.data[0] == 1.0);
    CHECK(p.data[1] == -2.0);
    CHECK(p.data[2] == 0.5);
}

TEST_CASE("single step from zero state matches the closed form") {
    // v = 0.01*g^2, update = lr*g/(sqrt(v)+eps) = lr*sign(g)/(0.1 + eps/|g|)
    Arr<double> p({1}, {0.0});
    Arr<double> g({1}, {2.0});
    ag::RmsPropState<double> st;
    ag::RmsPropConfig<double> cfg;
    cfg.lr = 1e-3;
    ag::rmsprop_step<double>({&p}, {&g}, st, cfg);
    double v = 0.01 * 4.0;
    double expect = -cfg.lr * 2.0 / (std::sqrt(v) + cfg.eps);
    CHECK(p.data[0] == doctest::Approx(expect).epsilon(1e-6));
    CHECK(st.v[0].data[0] == doctest::Approx(v).epsilon(1e-12));
}

TEST_CASE("running average stays non-negative under sign-flipping gradients") {
    Arr<double> p({1}, {1.0});
    ag::RmsPropState<double> st;
    ag::RmsPropConfig<double> cfg;
    for (int i = 0; i < 50; ++i) {
        Arr<double> g({1}, {i % 2 == 0 ? 3.0 : -3.0});
        ag::rmsprop_step<double>({&p}, {&g}, st, cfg);
        CHECK(st.v[0].data[0] >= 0.0);
    }
}

TEST_CASE("100 steps on x^2 from x=5 with lr 0.05 converge near zero") {
    Arr<double> x({1}, {5.0});
    ag::RmsPropState<double> st;
    ag::RmsPropConfig<double> cfg;
    cfg.lr = 0.05;
    for (int i = 0; i < 100; ++i) {
        Arr<double> g({1}, {2.0 * x.data[0]});
        ag::rmsprop_step<double>({&x}, {&g}, st, cfg);
    }
    CHECK(std::abs(x.data[0]) < 0.5);
}

TEST_CASE("shape changes between steps are rejected") {
    Arr<double> p({2}, {1.0, 2.0});
    Arr<double> g({2}, {0.1, 0.1});
    ag::RmsPropState<double> st;
    ag::RmsPropConfig<double> cfg;
    ag::rmsprop_step<double>({&p}, {&g}, st, cfg);
    Arr<double> p3({3});
    Arr<double> g3({3});
    CHECK_THROWS_AS(ag::rmsprop_step<double>({&p3}, {&g3}, st, cfg), std::invalid_argument);
}

}  // TEST_SUITE
