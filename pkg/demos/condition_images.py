r"""
Face, background and entire-frame images
========================================

One frame gives three inputs: the aligned face, the background with the face
box painted over, and the whole frame shrunk to 256x465. Images are written
to ``demo_output/`` next to this script.
"""

from pathlib import Path

import numpy as np

from regionablate import files, imageops, synthetic

out_dir = Path(__file__).with_name("demo_output")

study = synthetic.make_study(n_uids=6, n_clips=12, frames_per_clip=3, seed=2)
frames = list(study.frames())

# The alignment target is the mean landmark layout, moved into 256x256 face
# coordinates.
template = imageops.fit_template_to_output(imageops.compute_template(f.landmarks for f in frames))

frame = frames[0]
face = imageops.make_face_condition(frame.image, frame.landmarks, template)
entire = imageops.make_entire_frame_condition(frame.image)
h, w = frame.image.shape[:2]
box = frame.face_box.scaled(entire.shape[1] / w, entire.shape[0] / h)
bg = imageops.make_background_condition(entire, box)

print("face box", frame.face_box, "-> in the 256x465 frame", box)
print("fill colour", bg.fill, "window anchored at the", bg.anchor, "edge")

for name, img in [("frame", frame.image), ("face", face), ("background", bg.image), ("entire_frame", entire)]:
    files.write_image(out_dir / f"{name}.png", img)
    print(f"{name:<13} {img.shape}")

# How alike are the images of one condition? Lower sigma means more alike.
faces = [imageops.make_face_condition(f.image, f.landmarks, template) for f in frames]
backgrounds = [imageops.make_background_condition(f.image, f.face_box).image for f in frames]
print(f"sigma face       = {imageops.image_set_sigma(faces):.2f}")
print(f"sigma background = {imageops.image_set_sigma(backgrounds):.2f}")

# The alignment is a least-squares similarity transform.
t = imageops.estimate_similarity_transform(frame.landmarks, template)
print(f"scale {t.scale:.3f}, rotation {np.degrees(t.angle):.2f} deg, translation {t.translation.round(2)}")
