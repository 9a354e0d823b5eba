mod support;

use jhgp::sampler::Mode;
use support::geweke::{check, cycles, geweke, geweke_scales};

#[test]
fn prior_reproduction_longitudinal_only() {
    assert!(check("hgp", geweke(Mode::HgpOnly, cycles(20_000), 11)));
}

#[test]
fn prior_reproduction_joint() {
    assert!(check("jhgp", geweke(Mode::Jhgp, cycles(20_000), 12)));
}

#[test]
fn prior_reproduction_survival_only() {
    assert!(check(
        "surv",
        geweke(Mode::SurvivalOnly, cycles(20_000), 13)
    ));
}

#[test]
fn prior_reproduction_scale_hierarchy() {
    assert!(check(
        "scales",
        geweke_scales(Mode::HgpOnly, cycles(200_000), 14)
    ));
}

#[test]
fn prior_reproduction_scale_hierarchy_without_noise() {
    assert!(check(
        "scales-surv",
        geweke_scales(Mode::SurvivalOnly, cycles(200_000), 15)
    ));
}
