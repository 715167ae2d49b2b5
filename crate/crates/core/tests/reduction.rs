//! Neighborhood estimators and trainers collapse onto the baselines under a constant treatment.

mod common;

use common::reduction as r;

#[test]
fn estimators_reduce() {
    r::estimators_reduce();
}

#[test]
fn trainers_reduce_bitwise() {
    r::trainers_reduce_bitwise();
}

#[test]
fn trainers_differ_when_treatments_vary() {
    r::trainers_differ_when_treatments_vary();
}
