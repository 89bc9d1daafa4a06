//! Reverse-mode gradients against central finite differences.

mod common;

use common::gradcases;
use common::{FD_RTOL, FD_STEP};

fn run(case: fn() -> gradcases::CaseSummary) {
    let s = case();
    println!("{}: {} instances, {} coordinates, worst relative error {:.2e}", s.name, s.instances, s.coords, s.worst_rel);
    assert!(s.instances as u64 >= gradcases::INSTANCES);
}

#[test]
fn fd_settings_are_the_pinned_ones() {
    assert_eq!(FD_STEP, 1e-5);
    assert_eq!(FD_RTOL, 1e-4);
}

#[test]
fn word_mlp() {
    run(gradcases::word_mlp);
}

#[test]
fn text_encoder_with_cls_positions_and_blocks() {
    run(gradcases::text_encoder_with_cls_positions_and_blocks);
}

#[test]
fn semantic_perceiver() {
    run(gradcases::semantic_perceiver);
}

#[test]
fn aggregator() {
    run(gradcases::aggregator);
}

#[test]
fn fusion() {
    run(gradcases::fusion);
}

#[test]
fn ssf_and_projection() {
    run(gradcases::ssf_and_projection);
}

#[test]
fn local_cross_attention_scores() {
    run(gradcases::local_cross_attention_scores);
}

#[test]
fn local_loss_gradients() {
    run(gradcases::local_loss_gradients);
}

#[test]
fn global_loss_gradients() {
    run(gradcases::global_loss_gradients);
}

#[test]
fn focus_loss_gradients() {
    run(gradcases::focus_loss_gradients);
}

#[test]
fn total_loss_gradients() {
    run(gradcases::total_loss_gradients);
}

#[test]
fn full_objective() {
    run(gradcases::full_objective);
}
