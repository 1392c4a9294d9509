use pyo3::ffi::c_str;
use pyo3::prelude::*;

fn run(code: &std::ffi::CStr) {
    Python::attach(|py| {
        matchsim_py::register(py).unwrap();
        if let Err(e) = py.run(code, None, None) {
            e.print(py);
            panic!("python snippet failed");
        }
    });
}

#[test]
fn market_round_trip_and_da() {
    run(c_str!(
        r#"
import matchsim
m = matchsim.Market.from_lists([[0, 1], [1, 0]], [[1, 0], [0, 1]])
mosm, trace = matchsim.run_mosm(m)
wosm, _ = matchsim.run_wosm(m)
assert mosm.pairs() == [(0, 0), (1, 1)]
assert wosm.pairs() == [(0, 1), (1, 0)]
assert trace["tau"] == 2
assert len(matchsim.enumerate_stable_matchings(m)) == 2
assert matchsim.find_blocking_pair(m, mosm) is None
men, women = m.to_lists()
assert men == [[0, 1], [1, 0]]
"#
    ));
}

#[test]
fn experiments_and_errors() {
    run(c_str!(
        r#"
import matchsim
s = matchsim.run_replications(1, 0, 1, 10, seed=3)
assert s["r_men"]["mean"] == 1.0 and s["r_men"]["std"] == 0.0
g = matchsim.Market.generate(30, -1, 5, 9)
mosm, trace = matchsim.run_mosm(g)
summary = matchsim.summarize(g, mosm)
assert summary["delta_m"] - summary["delta_w"] == -1
assert abs(summary["r_men"] * 29 - (trace["tau"] + summary["delta_m"])) < 1e-9
p = matchsim.predict(1001, -1, 16)
assert p["r_men"] == 4.0 and p["regime"] == "moderate"
t = matchsim.find_threshold("connectivity", 60, 10, seed=1, d_hi=20)
assert 1 < t["d_star"] <= 20
try:
    matchsim.Market.generate(5, 0, 9, 1)
except ValueError:
    pass
else:
    raise AssertionError("d > n accepted")
"#
    ));
}
