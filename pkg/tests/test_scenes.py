import numpy as np
import pytest

from textsr.scenes import (SceneObject, SceneSpec, generate_scene,
                           random_scene_spec)


def test_empty_scene_is_background_only():
    image, regions = generate_scene(SceneSpec(width=32, height=32, objects=[]))
    assert image.shape == (32, 32, 3)
    assert regions == []
    assert len(np.unique(image.reshape(-1, 3), axis=0)) == 1


def test_full_canvas_rectangle_covers_everything():
    # axis-aligned rectangle with half-extents covering the 32x32 canvas
    obj = SceneObject(shape="stripe-band", cx=16, cy=16, size=40,
                      color="red", texture="solid")
    image, regions = generate_scene(SceneSpec(width=32, height=32, objects=[obj]))
    assert regions[0].area == 32 * 32
    assert regions[0].mask.all()


def test_fixed_seed_bit_identical():
    img1, reg1 = generate_scene(123)
    img2, reg2 = generate_scene(123)
    np.testing.assert_array_equal(img1, img2)
    for a, b in zip(reg1, reg2):
        np.testing.assert_array_equal(a.mask, b.mask)
    img3, _ = generate_scene(124)
    assert np.any(img3 != img1)


def test_masks_disjoint_and_cover_with_background():
    for seed in range(8):
        spec = random_scene_spec(seed, canvas=64, min_objects=2, max_objects=4)
        _, regions = generate_scene(spec)
        total = np.zeros((64, 64), dtype=int)
        for region in regions:
            total += region.mask.astype(int)
            assert region.area == int(region.mask.sum())
        assert total.max() <= 1  # pairwise disjoint


def test_out_of_canvas_object_rejected():
    obj = SceneObject(shape="circle", cx=2, cy=2, size=10, color="red",
                      texture="solid")
    with pytest.raises(ValueError):
        generate_scene(SceneSpec(width=32, height=32, objects=[obj]))


def test_occlusion_assigns_pixels_to_topmost():
    bottom = SceneObject(shape="circle", cx=16, cy=16, size=10, color="red",
                         texture="solid")
    top = SceneObject(shape="circle", cx=16, cy=16, size=5, color="blue",
                      texture="solid")
    _, regions = generate_scene(SceneSpec(width=32, height=32,
                                          objects=[bottom, top]))
    assert regions[1].area > 0
    assert not (regions[0].mask & regions[1].mask).any()
    # the occluded bottom object lost exactly the top object's pixels
    assert regions[0].area + regions[1].area == np.count_nonzero(
        regions[0].mask | regions[1].mask)


def test_all_shape_and_texture_combinations_render():
    from textsr.scenes import SHAPES, TEXTURES
    for i, shape in enumerate(SHAPES):
        for j, texture in enumerate(TEXTURES):
            obj = SceneObject(shape=shape, cx=32, cy=32, size=10, color="green",
                              texture=texture, orientation_deg=30.0)
            image, regions = generate_scene(SceneSpec(objects=[obj],
                                                      texture_seed=i * 7 + j))
            assert np.all(np.isfinite(image))
            assert 0.0 <= image.min() and image.max() <= 1.0
            assert regions[0].area > 0


def test_random_spec_deterministic_and_valid():
    a = random_scene_spec(55)
    b = random_scene_spec(55)
    assert a == b
    a.validate()
    assert 1 <= len(a.objects) <= 4
