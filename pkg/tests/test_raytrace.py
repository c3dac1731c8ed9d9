import cmath
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from shapely.geometry import LineString, Polygon

from conftest import box, flat_scene, regular_polygon
from oracles import C0, channel_sum, friis_db, mirror_point, winding_number
from twinforge.geometry import build_proxy, ellipsoid_contains, make_ellipsoid, overlap_volume, vertical_overlap_thickness
from twinforge.raytrace import (
    NO_COVERAGE,
    RadioMap,
    TraceConfig,
    Tracer,
    compute_channel,
    compute_channels,
    compute_radio_map,
    extract_facets,
    path_gain_db,
    radio_map_from_tracer,
    rx_points,
    trace_paths,
)
from twinforge.scene import Building, Scene, Terrain, TxConfig, generate_synthetic_city

F = 3.5e9
LAM = C0 / F


def wall(bid=0, y0=40.0, x0=0.0, x1=100.0, h=50.0):
    return box(bid, x0, y0, x1, y0 + 1.0, h=h)


@pytest.fixture(scope="module")
def small_city():
    return generate_synthetic_city(11, 25, 250.0, __import__("twinforge.scene", fromlist=["CityParams"]).CityParams(
        cells=25, clear_zones=((125.0, 125.0, 12.0),)))


# facets


def test_facets_square_and_empty():
    assert len(extract_facets(flat_scene([box(0, 10, 10, 20, 20)]))) == 4
    assert extract_facets(flat_scene()) == []


def test_facet_normals_point_outward(small_city):
    for f in extract_facets(small_city):
        fp = small_city.building(f.building_id).footprint
        mx, my = (f.p0[0] + f.p1[0]) / 2, (f.p0[1] + f.p1[1]) / 2
        assert winding_number((mx + 1e-3 * f.normal[0], my + 1e-3 * f.normal[1]), fp) == 0
        assert winding_number((mx - 1e-3 * f.normal[0], my - 1e-3 * f.normal[1]), fp) != 0
        ex, ey = f.p1[0] - f.p0[0], f.p1[1] - f.p0[1]
        assert abs(ex * f.normal[0] + ey * f.normal[1]) < 1e-9
        assert math.hypot(*f.normal) == pytest.approx(1.0, abs=1e-15)


def test_facet_normals_outward_on_concave_building():
    b = Building(0, ((10, 10), (30, 10), (30, 15), (15, 15), (15, 30), (10, 30)), 0.0, 10.0)
    for f in extract_facets(flat_scene([b])):
        mx, my = (f.p0[0] + f.p1[0]) / 2, (f.p0[1] + f.p1[1]) / 2
        assert winding_number((mx + 1e-3 * f.normal[0], my + 1e-3 * f.normal[1]), b.footprint) == 0


# single paths


def test_open_scene_single_los():
    s = flat_scene()
    ps = trace_paths(s, (10, 10, 20), (90, 70, 1.5), 3)
    assert len(ps) == 1 and ps[0].kind == "LoS"
    assert ps[0].length == pytest.approx(math.dist((10, 10, 20), (90, 70, 1.5)), rel=1e-15)


def test_blocked_los_without_reflections_is_empty():
    s = flat_scene([box(0, 40, 40, 60, 60, h=50)])
    assert trace_paths(s, (20, 50, 10), (80, 50, 1.5), 3) == []


def test_single_mirror_image_source():
    s = flat_scene([wall()])
    x_t, x_r = (10.0, 10.0, 20.0), (90.0, 25.0, 1.5)
    ps = trace_paths(s, x_t, x_r, 3)
    refl = [p for p in ps if p.order == 1]
    assert [p.order for p in ps] == [0, 1]
    img = mirror_point(x_t, (100.0, 40.0), (0.0, 40.0))
    assert abs(refl[0].length - float(np.linalg.norm(img - np.asarray(x_r)))) <= 1e-9
    q = refl[0].points[0]
    assert q[1] == pytest.approx(40.0, abs=1e-9)


def test_reflection_point_must_hit_the_facet():
    # the specular point would be at x > 100, beyond the wall's end
    s = flat_scene([wall(x1=30.0)], n=40)
    ps = trace_paths(s, (60.0, 10.0, 5.0), (90.0, 10.0, 5.0), 1)
    assert [p.order for p in ps] == [0]


def test_reflection_point_below_roof_only():
    s = flat_scene([wall(h=3.0)])
    # specular point on the wall sits at z well above 3 m
    ps = trace_paths(s, (10.0, 30.0, 40.0), (90.0, 30.0, 40.0), 1)
    assert [p.order for p in ps] == [0]


def test_two_parallel_walls_orders():
    s = flat_scene([box(0, 0, 20, 100, 21, h=60), box(1, 0, 79, 100, 80, h=60)])
    x_t, x_r = (10.0, 50.0, 10.0), (90.0, 40.0, 1.5)
    ps = trace_paths(s, x_t, x_r, 3)
    assert [p.order for p in ps].count(0) == 1
    for p in ps:
        # each image is a closed form: unfold across the walls named by the facet sequence
        img = np.asarray(x_t, float)
        facets = extract_facets(s)
        for fi in p.facets:
            img = mirror_point(img, facets[fi].p0, facets[fi].p1)
        assert abs(p.length - float(np.linalg.norm(img - np.asarray(x_r)))) <= 1e-9
    assert sorted(p.order for p in ps) == [0, 1, 1, 2, 2, 3, 3]


def test_amplitude_model():
    cfg = TraceConfig(3, 0.6, math.pi)
    s = flat_scene([box(0, 0, 20, 100, 21, h=60), box(1, 0, 79, 100, 80, h=60)])
    for p in trace_paths(s, (10, 50, 10), (90, 40, 1.5), 3, cfg, F):
        assert abs(p.amplitude) == pytest.approx(LAM / (4 * math.pi * p.length) * 0.6 ** p.order, rel=1e-12)
        want = -2 * math.pi * p.length / LAM + p.order * math.pi
        assert cmath.phase(p.amplitude * cmath.exp(-1j * want)) == pytest.approx(0.0, abs=1e-6)


def test_path_gain_examples():
    s = flat_scene()
    ps = trace_paths(s, (0, 0, 10), (100, 0, 10), 0)
    assert path_gain_db(ps) == pytest.approx(-83.33, abs=5e-3)
    assert path_gain_db(ps) == pytest.approx(friis_db(100.0), abs=1e-12)
    assert path_gain_db([]) == NO_COVERAGE
    assert path_gain_db(ps + ps) == pytest.approx(path_gain_db(ps) + 10 * math.log10(2), abs=1e-12)


def test_ground_bounce_flag():
    s = flat_scene()
    x_t, x_r = (10.0, 10.0, 20.0), (80.0, 60.0, 1.5)
    assert len(trace_paths(s, x_t, x_r, 1)) == 1
    ps = trace_paths(s, x_t, x_r, 1, TraceConfig(1, ground_reflection=True))
    assert [p.order for p in ps] == [0, 1]
    img = (x_t[0], x_t[1], -x_t[2])
    assert ps[1].length == pytest.approx(math.dist(img, x_r), abs=1e-9)


def test_concave_building_occlusion_matches_2d_oracle(rng):
    b = Building(0, ((10, 10), (90, 10), (90, 30), (30, 30), (30, 90), (10, 90)), 0.0, 100.0)
    s = flat_scene([b])
    poly = Polygon(b.footprint)
    for _ in range(200):
        a = rng.uniform(0, 100, 2)
        c = rng.uniform(0, 100, 2)
        if poly.buffer(1e-6).contains(LineString([a, a]).centroid) or poly.buffer(1e-6).contains(
                LineString([c, c]).centroid):
            continue
        seg = LineString([a, c])
        inter = seg.intersection(poly)
        if 0 < inter.length < 1e-6:
            continue
        ps = trace_paths(s, (a[0], a[1], 5.0), (c[0], c[1], 5.0), 0)
        assert (len(ps) == 1) == (inter.length == 0.0)


# properties over random scenes


@st.composite
def street_scene(draw):
    n = draw(st.integers(1, 5))
    blds = []
    for i in range(n):
        cx = draw(st.floats(20, 180))
        cy = draw(st.floats(20, 180))
        r = draw(st.floats(4, 15))
        k = draw(st.integers(4, 7))
        rot = draw(st.floats(0, 1))
        blds.append(Building(i, regular_polygon(cx, cy, r, k, rot), 0.0, draw(st.floats(5, 50))))
    polys = [Polygon(b.footprint) for b in blds]
    keep = []
    for i, p in enumerate(polys):
        if all(p.distance(polys[j]) > 1.0 for j in keep):
            keep.append(i)
    return Scene(tuple(blds[i] for i in keep), Terrain((0, 0), 10.0, 20, 20))


def free_point(draw, scene, z):
    x = draw(st.floats(1, 199))
    y = draw(st.floats(1, 199))
    for b in scene.buildings:
        if Polygon(b.footprint).buffer(0.5).contains(Polygon([(x, y), (x + 1e-3, y), (x, y + 1e-3)])):
            return None
    return (x, y, z)


@given(st.data())
def test_reciprocity(data):
    s = data.draw(street_scene())
    a = free_point(data.draw, s, data.draw(st.floats(1, 40)))
    b = free_point(data.draw, s, data.draw(st.floats(1, 40)))
    if a is None or b is None or a == b:
        return
    fwd = sorted(round(p.length, 6) for p in trace_paths(s, a, b, 2))
    bwd = sorted(round(p.length, 6) for p in trace_paths(s, b, a, 2))
    assert fwd == bwd


@given(st.data())
def test_energy_and_length_bounds(data):
    s = data.draw(street_scene())
    a = free_point(data.draw, s, 25.0)
    b = free_point(data.draw, s, 1.5)
    if a is None or b is None:
        return
    d = math.dist(a, b)
    for p in trace_paths(s, a, b, 3):
        assert p.length >= d - 1e-9
        assert abs(p.amplitude) <= LAM / (4 * math.pi * d) * (1 + 1e-12)
        seg = [a, *p.points, b]
        assert p.length == pytest.approx(sum(math.dist(u, v) for u, v in zip(seg, seg[1:])), rel=1e-12)


@given(st.data())
def test_paths_touch_only_overlapping_proxies(data):
    s = data.draw(street_scene())
    a = free_point(data.draw, s, 20.0)
    b = free_point(data.draw, s, 1.5)
    if a is None or b is None:
        return
    facets = extract_facets(s)
    d = math.dist(a, b)
    for p in trace_paths(s, a, b, 3):
        delta = p.length - d + 1e-7
        e = make_ellipsoid(a, b, delta)
        for q, fi in zip(p.points, p.facets):
            assert ellipsoid_contains(e, q, tol=1e-6)
            proxy = build_proxy(s.building(facets[fi].building_id))
            vol = overlap_volume(proxy, e, 0.25, seed=0)
            # reflection point on the proxy boundary: either positive overlap, or the contact is
            # with the ellipsoid's skin, or the overlap is a sliver thinner than the sampling pitch
            n = facets[fi].normal
            inward = (q[0] - 1e-4 * n[0], q[1] - 1e-4 * n[1])
            skin = abs(float(np.sum(np.linalg.norm(np.asarray(q) - np.asarray([a, b]), axis=1))) - (d + delta)) <= 1e-6
            tau = vertical_overlap_thickness(e, inward, proxy.z_low, proxy.z_high)
            assert vol > 0 or skin or tau > 0


# radio maps


def test_open_map_is_friis_everywhere():
    s = flat_scene(n=20, cell=5.0)
    tx = TxConfig((52.3, 47.1, 12.0), F, 4, 0.5)
    m = compute_radio_map(s, tx, 1.5, 3)
    pts = rx_points(s, 1.5)
    want = np.array([friis_db(math.dist(tx.position, p)) for p in pts]).reshape(m.shape)
    assert np.max(np.abs(m.values - want)) <= 1e-9
    d = np.linalg.norm(pts - np.asarray(tx.position), axis=1)
    order = np.argsort(d)
    v = m.values.ravel()[order]
    ds = d[order]
    strict = np.diff(ds) > 1e-9
    assert np.all(np.diff(v)[strict] < 0)


def test_slab_shadow_classification():
    slab = box(0, 40, 20, 45, 80, h=60)
    s = flat_scene([slab], n=20, cell=5.0)
    tx = TxConfig((20.0, 50.0, 10.0), F, 4, 0.5)
    pts = rx_points(s, 1.5)
    proxy = build_proxy(slab)
    from twinforge.geometry import segment_prism_entry

    shadow = np.array([segment_prism_entry(tx.position, p, proxy) is not None for p in pts])
    inside = s.footprint_mask()
    los_only = compute_radio_map(s, tx, 1.5, 0).values.ravel()
    full = compute_radio_map(s, tx, 1.5, 2).values.ravel()
    friis = np.array([friis_db(math.dist(tx.position, p)) for p in pts])
    sunny = ~shadow & ~inside
    assert np.max(np.abs(los_only[sunny] - friis[sunny])) <= 1e-9
    assert np.all(los_only[shadow | inside] == NO_COVERAGE)
    # a single convex slab cannot reflect into its own shadow
    assert np.all(full[shadow] == NO_COVERAGE)
    assert np.all(full[sunny] >= friis[sunny] - 1e-9)


def test_footprint_cells_are_no_coverage(small_city):
    tx = TxConfig((125.0, 125.0, 25.0), F, 4, 0.5)
    m = compute_radio_map(small_city, tx, 1.5, 1)
    assert np.all(m.values.ravel()[small_city.footprint_mask()] == NO_COVERAGE)
    assert m.shape == small_city.terrain.shape


def test_map_matches_per_cell_tracing(small_city):
    # the beam prefilter must not drop paths: compare with tracing every sequence per cell
    tx = TxConfig((125.0, 125.0, 25.0), F, 4, 0.5)
    tr = Tracer(small_city, tx.position, TraceConfig(2))
    m = radio_map_from_tracer(tr, tx)
    pts = rx_points(small_city)
    mask = small_city.footprint_mask()
    ref = np.array([NO_COVERAGE if mask[i] else path_gain_db(tr.paths(p, tx.wavelength))
                    for i, p in enumerate(pts)])
    got = m.values.ravel()
    assert np.array_equal(got == NO_COVERAGE, ref == NO_COVERAGE)
    fin = ref != NO_COVERAGE
    assert np.max(np.abs(got[fin] - ref[fin])) <= 1e-9


def test_map_threads_identical(small_city):
    tx = TxConfig((125.0, 125.0, 25.0), F, 4, 0.5)
    a = compute_radio_map(small_city, tx, 1.5, 2, threads=1)
    b = compute_radio_map(small_city, tx, 1.5, 2, threads=4)
    assert a.values.tobytes() == b.values.tobytes()


def test_without_equals_rebuild(small_city):
    tx = TxConfig((125.0, 125.0, 25.0), F, 4, 0.5)
    tr = Tracer(small_city, tx.position, TraceConfig(2))
    for bid in small_city.ids[:6]:
        a = radio_map_from_tracer(tr.without(bid), tx)
        b = compute_radio_map(small_city.without(bid), tx, 1.5, 2)
        assert a.values.tobytes() == b.values.tobytes()
    with pytest.raises(KeyError):
        tr.without(12345)


def test_same_scene_same_map(small_city):
    tx = TxConfig((125.0, 125.0, 25.0), F, 4, 0.5)
    a = compute_radio_map(small_city, tx, 1.5, 2)
    b = compute_radio_map(Scene(small_city.buildings, small_city.terrain), tx, 1.5, 2)
    assert a.values.tobytes() == b.values.tobytes()


def test_radio_map_text_round_trip(tmp_path, small_city):
    tx = TxConfig((125.0, 125.0, 25.0), F, 4, 0.5)
    m = compute_radio_map(small_city, tx, 1.5, 1)
    p = tmp_path / "rm.txt"
    m.save(p)
    text = p.read_text()
    assert text.startswith("# twinforge-radiomap/1\nnx=25 ny=25 ")
    assert "-inf" in text
    back = RadioMap.load(p)
    assert back.values.tobytes() == m.values.tobytes()
    assert back.origin == m.origin and back.cell_size == m.cell_size


# channels


def test_channel_single_path_constant_modulus():
    tx = TxConfig((10.0, 20.0, 10.0), F, 16, 0.5)
    h = compute_channel(flat_scene(), tx, (80.0, 70.0, 1.5))
    assert np.allclose(np.abs(h), np.abs(h[0]), rtol=1e-12)
    assert abs(h[0]) == pytest.approx(LAM / (4 * math.pi * math.dist(tx.position, (80, 70, 1.5))), rel=1e-12)


def test_channel_no_paths_is_zero():
    s = flat_scene([box(0, 40, 40, 60, 60, h=50)])
    tx = TxConfig((20.0, 50.0, 10.0), F, 8, 0.5)
    assert not np.any(compute_channel(s, tx, (80.0, 50.0, 1.5)))


def test_channel_two_paths_vs_direct_sum():
    s = flat_scene([wall()])
    tx = TxConfig((10.0, 10.0, 20.0), F, 4, 0.5)
    x_r = (90.0, 25.0, 1.5)
    ps = trace_paths(s, tx.position, x_r, 3, TraceConfig(3), F)
    assert len(ps) == 2
    ref = channel_sum([(p.length, p.order, p.departure[0]) for p in ps], LAM, 4,
                      gamma=cmath.rect(0.6, math.pi))
    h = compute_channel(s, tx, x_r)
    assert np.max(np.abs(h - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_departure_of_reflection_points_at_image():
    s = flat_scene([wall()])
    x_t, x_r = (10.0, 10.0, 20.0), (90.0, 25.0, 1.5)
    p = [q for q in trace_paths(s, x_t, x_r, 1) if q.order == 1][0]
    v = np.asarray(p.points[0]) - np.asarray(x_t)
    assert np.allclose(p.departure, v / np.linalg.norm(v), atol=1e-15)


def test_compute_channels_batch(small_city):
    tx = TxConfig((125.0, 125.0, 25.0), F, 8, 0.5)
    pts = rx_points(small_city)[:30]
    batch = compute_channels(small_city, tx, pts, 2)
    for p, h in zip(pts, batch):
        assert np.array_equal(h, compute_channel(small_city, tx, p, 2))


def test_coincident_endpoints_rejected():
    with pytest.raises(ValueError, match="coincides"):
        trace_paths(flat_scene(), (5.0, 5.0, 1.5), (5.0, 5.0, 1.5), 1)


def test_negative_depth_rejected():
    with pytest.raises(ValueError):
        Tracer(flat_scene(), (0, 0, 0), TraceConfig(-1))
