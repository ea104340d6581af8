"""Regenerates the grounded-counterfactual fixtures. Deterministic."""
import csv
import json
import math
import os
import random

ROOT = os.path.dirname(os.path.abspath(__file__))
COVER = {"rules": [{"kind": "catch_all"}, {"kind": "per_value", "field": "actor"}]}


def write(case, name, body):
    d = os.path.join(ROOT, case)
    os.makedirs(d, exist_ok=True)
    with open(os.path.join(d, name), "w") as f:
        f.write(body)


def jsonl(rows):
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


def episode(case, eid, triples, meta=None):
    events = []
    for i, (a, r, o) in enumerate(triples):
        events.append({"actor": a, "action": "reports", "observation": o, "relation": r,
                       "provenance": f"{case}:{eid}:{i}"})
    ep = {"id": eid, "source_doc": f"{case}_study", "events": events}
    if meta:
        ep["metadata"] = meta
    return ep


def evidence(eps, conf=0.85):
    return [{"id": ev["provenance"], "source_id": ep["source_doc"], "locator": f"claim {i}",
             "extraction_confidence": conf}
            for ep in eps for i, ev in enumerate(ep["events"])]


def case_files(case, eps, spec):
    write(case, "episodes.jsonl", jsonl(eps))
    write(case, "evidence.jsonl", jsonl(evidence(eps)))
    write(case, "cover.json", json.dumps(COVER, indent=2) + "\n")
    write(case, "config.json", json.dumps({"episodes": "episodes.jsonl", "evidence": "evidence.jsonl",
                                           "cover_spec": "cover.json"}, indent=2) + "\n")
    write(case, "intervention.json", json.dumps(spec, indent=2) + "\n")


def microplastics():
    rng = random.Random(11)
    rows = []
    for lat in range(-75, 76, 15):
        for lon in range(0, 360, 45):
            rows.append([lat, lon, 0.02 + 0.04 * rng.random() * math.exp(-((lat - 30) / 40) ** 2)])
    w = [math.cos(math.radians(r[0])) for r in rows]
    mean = sum(wi * r[2] for wi, r in zip(w, rows)) / sum(w)
    scale = 0.03914 / mean
    out = "lat,lon,forcing\n" + "".join(f"{r[0]},{r[1]},{r[2] * scale:.12f}\n" for r in rows)
    write("microplastics", "forcing_grid.csv", out)
    triples = [
        ("colored_mnp_light_absorption", "increase", "light_absorption"),
        ("colored_mnp_light_absorption", "increase", "atmospheric_heating"),
        ("atmospheric_ageing_optical_effects", "increases", "mnp_absorption"),
        ("atmospheric_ageing_optical_effects", "modulates", "single_scattering_albedo"),
        ("direct_mnp_radiative_forcing", "produces", "mean_direct_radiative_forcing"),
        ("direct_mnp_radiative_forcing", "equals", "black_carbon_fraction"),
        ("regional_forcing_hotspots", "concentrate", "regional_forcing"),
        ("regional_forcing_hotspots", "increase", "hotspot_warming"),
        ("radiative_transfer_estimation", "estimates", "direct_radiative_forcing"),
        ("mnp_climate_forcing_agents", "contribute_to", "atmospheric_warming"),
        ("black_carbon_benchmark", "scales", "forcing_comparison"),
    ]
    eps = [episode("microplastics", "mnp_study", triples)]
    spec = {
        "kind": "grounded",
        "substrate": {"kind": "scale_map", "path": "forcing_grid.csv", "columns": {"value": "forcing"},
                      "m_base": 0.039, "m_cf": 0.0036667},
        "rewrites": [
            {"match": "colored_mnp_light_absorption|*|*",
             "replacement": "counterfactual_white_mnp_optics|sets_to|white_pristine_absorption",
             "note": "white/pristine optics from source tables"},
            {"match": "direct_mnp_radiative_forcing|*|*",
             "replacement": "counterfactual_mnp_direct_radiative_forcing|produces|white_equivalent_mean_direct_radiative_forcing",
             "note": "scale factor 0.0940"},
            {"match": "regional_forcing_hotspots|*|*",
             "replacement": "counterfactual_regional_mnp_forcing_hotspots|reduced_by|0.906_forcing_fraction",
             "note": "suppressed fraction 0.906"},
        ],
    }
    case_files("microplastics", eps, spec)


def indus():
    base = [-11.2, -6.4, -9.9, -7.3, -12.6, -4.8, -8.1, -10.5, -6.9,
            -9.2, -7.7, -13.1, -5.5, -8.8, -10.1, -6.2, -9.6]
    last = round(-8.49 * 18 - sum(base), 2)
    vals = base + [last]
    assert abs(sum(vals) / 18 + 8.49) < 1e-9
    out = "station,anomaly_pct\n" + "".join(f"st{i + 1:02d},{v:.2f}\n" for i, v in enumerate(vals))
    write("indus", "discharge_anomaly.csv", out)
    triples = [
        ("vic_hydrology", "simulates", "river_discharge"),
        ("multi_factor_explanation", "attributes", "settlement_shift"),
        ("d3_rainfall_deficit", "reduces", "river_flow"),
        ("freshwater_availability", "declines_with", "river_flow"),
        ("harappan_metamorphosis", "follows", "drought_driven_dispersal"),
    ]
    eps = [episode("indus", "indus_study", triples)]
    spec = {
        "kind": "grounded",
        "substrate": {"kind": "index_substitution", "path": "discharge_anomaly.csv"},
        "rewrites": [
            {"match": "d3_rainfall_deficit|reduces|river_flow",
             "replacement": "counterfactual_restored_monsoon_forcing|increases|vic_water_availability_proxy",
             "note": "index 91.51 -> 100"},
            {"match": "freshwater_availability|*|*",
             "replacement": "counterfactual_freshwater_availability|increases|*",
             "note": "restored discharge"},
            {"match": "harappan_metamorphosis|*|*",
             "replacement": "counterfactual_hydrology_only_dispersal_support|weakens|drought_driven_dispersal",
             "note": "hydrology-only support weakened"},
        ],
    }
    case_files("indus", eps, spec)


def sachs():
    d_pka = 1.30533
    shifts = {"PKA": d_pka, "Akt": 1.25 / d_pka, "Erk": 1.06 / d_pka, "Raf": 0.05, "Mek": -0.04}
    base = {"PKA": 4.20, "Akt": 3.90, "Erk": 3.804, "Raf": 3.1, "Mek": 2.7}
    markers = list(base)
    lines = ["group," + ",".join(markers)]
    for group, add in (("cd3cd28", 0.0), ("pka_activator", 1.0)):
        for off in (-0.15, 0.15, -0.05, 0.05):
            vals = [math.expm1(base[m] + add * shifts[m] + off) for m in markers]
            lines.append(group + "," + ",".join(f"{v:.12f}" for v in vals))
    write("sachs", "sachs_panel.csv", "\n".join(lines) + "\n")
    eps = []
    for k in range(10):
        eps.append(episode("sachs", f"sachs_{k}", [("pka", "inhibits", "raf"), ("pka", "activates", "akt"),
                                                   ("pka", "activates", "erk")]))
    eps.append(episode("sachs", "sachs_cascade", [("raf", "activates", "mek"), ("mek", "activates", "erk")]))
    spec = {
        "kind": "grounded",
        "substrate": {"kind": "group_mean_substitution", "path": "sachs_panel.csv",
                      "base_group": "cd3cd28", "target_group": "pka_activator",
                      "focus_markers": ["PKA", "Akt", "Erk"], "transform": "log1p",
                      "edges": [["PKA", "Akt"], ["PKA", "Erk"]]},
        "rewrites": [{"match": "pka|*|*", "replacement": "counterfactual_pka_regime|*|*",
                      "note": "PKA-activating regime"}],
        "data_episode": {"id": "sachs_grounded",
                         "events": ["pka_activator_regime|increases|pka_akt_erk_index"]},
    }
    case_files("sachs", eps, spec)


def singing_mice():
    n = 1000
    plan = {"steg": {"AUD": 131, "PAG": 79}, "mmus": {"AUD": 42, "PAG": 17}}
    lines = ["group,AUD,PAG"]
    for g, counts in plan.items():
        for i in range(n):
            lines.append(f"{g},{int(i < counts['AUD'])},{int(i < counts['PAG'])}")
    write("singing_mice", "projection_fractions.csv", "\n".join(lines) + "\n")
    triples = [
        ("steg_auditory_cortex_projection", "expands_to", "auditory_cortex"),
        ("steg_motor_cortex_pathway", "expands_to", "periaqueductal_gray"),
        ("projection_expansion", "supports", "vocal_repertoire_claim_support"),
        ("orofacial_motor_cortex", "controls", "song_timing"),
        ("species_comparison", "contrasts", "mmus_projection_density"),
    ]
    eps = [episode("singing_mice", "mice_study", triples)]
    spec = {
        "kind": "grounded",
        "substrate": {"kind": "group_mean_substitution", "path": "projection_fractions.csv",
                      "base_group": "steg", "target_group": "mmus", "focus_markers": ["AUD", "PAG"],
                      "transform": "fraction_positive"},
        "rewrites": [
            {"match": "steg_auditory_cortex_projection|*|*",
             "replacement": "counterfactual_auditory_projection_expansion|attenuates_to|mmus_species_mean"},
            {"match": "steg_motor_cortex_pathway|*|*",
             "replacement": "counterfactual_pag_vocal_motor_projection|attenuates_to|mmus_species_mean"},
            {"match": "projection_expansion|supports|vocal_repertoire_claim_support",
             "replacement": "counterfactual_vocal_repertoire_claim_bridge|weakens|vocal_repertoire_claim_support"},
        ],
    }
    case_files("singing_mice", eps, spec)


def ocean():
    topics = ["acidification", "warming", "deoxygenation", "plankton", "fisheries", "coral",
              "sea_ice", "upwelling", "carbon_sink", "nutrients", "currents"]
    eps = []
    for i, t in enumerate(topics):
        eps.append(episode("ocean", f"ocean_{i:02d}", [
            (f"{t}_driver", "increases", f"{t}_stress"),
            (f"{t}_stress", "reduces", "ocean_productivity"),
        ], meta={"topic": t}))
    write("ocean", "episodes.jsonl", jsonl(eps))
    cover = {"rules": [{"kind": "catch_all"}, {"kind": "per_value", "field": "metadata.topic"}]}
    write("ocean", "cover.json", json.dumps(cover, indent=2) + "\n")
    write("ocean", "config.json", json.dumps({"episodes": "episodes.jsonl", "cover_spec": "cover.json",
                                             "atlas": {"query_terms": ["coral", "plankton"]}},
                                            indent=2) + "\n")


def larval():
    eps = [episode("larval", "larval_0", [("temperature", "increases", "larval_growth"),
                                          ("larval_growth", "increases", "settlement")],
                   meta={"stage": "larva"}),
           episode("larval", "larval_1", [("temperature", "increases", "larval_growth"),
                                          ("predation", "reduces", "settlement")],
                   meta={"stage": "larva"}),
           episode("larval", "juvenile_0", [("food_supply", "increases", "juvenile_survival")],
                   meta={"stage": "juvenile"})]
    rows = jsonl(eps).splitlines()
    ev = evidence(eps, 0.8)[:-1]
    write("larval", "episodes.jsonl", "\n".join(rows) + "\n")
    write("larval", "evidence.jsonl", jsonl(ev))
    cover = {"rules": [{"kind": "catch_all"}, {"kind": "per_value", "field": "metadata.stage"}]}
    write("larval", "cover.json", json.dumps(cover, indent=2) + "\n")
    write("larval", "config.json", json.dumps({"episodes": "episodes.jsonl", "evidence": "evidence.jsonl",
                                              "cover_spec": "cover.json"}, indent=2) + "\n")


def minimal():
    eps = [episode("minimal", "only", [("rain", "increases", "runoff")])]
    write("minimal", "episodes.jsonl", jsonl(eps))
    write("minimal", "config.json", json.dumps({"episodes": "episodes.jsonl"}, indent=2) + "\n")


if __name__ == "__main__":
    microplastics()
    indus()
    sachs()
    singing_mice()
    ocean()
    larval()
    minimal()
