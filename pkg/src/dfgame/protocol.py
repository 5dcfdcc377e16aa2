"""Dataset contract: naming grammar, task lists, and submission validation.

A creation submission is a directory of PNGs named
``idT_idS_vidIdx_frameIdx.png`` -- the frame ``frameIdx`` of target person
``idT``'s video ``vidIdx`` with the face swapped to source person ``idS``.
Real images use the three-token form ``idT_vidIdx_frameIdx.png``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from .errors import (
    CoverageError,
    ExtraneousFileError,
    NamingError,
    ParameterError,
    ShapeError,
    ValidationError,
)
from .identity import TOY_PROVIDER, EmbeddingProvider, IdentityReference, id_reference
from .imagebuf import ImageBuf, load_png

INDEX_PAD = 4


def _check_label(label: str, role: str) -> str:
    if not label or "_" in label or "/" in label or "\\" in label:
        raise NamingError(f"bad {role} label {label!r}: empty or contains '_' or path separators")
    return label


def _parse_index(token: str, role: str) -> int:
    if not token.isdigit():
        raise NamingError(f"bad {role} index {token!r}: not a non-negative integer")
    return int(token)


@dataclass(frozen=True, order=True)
class FaceSwapId:
    """Target person, source person, video index, frame index."""

    id_t: str
    id_s: str
    vid_idx: int
    frame_idx: int

    def __post_init__(self):
        _check_label(self.id_t, "target")
        _check_label(self.id_s, "source")
        if self.id_t == self.id_s:
            raise NamingError(f"source equals target: {self.id_t!r}")
        if self.vid_idx < 0 or self.frame_idx < 0:
            raise NamingError(f"negative index in {self!r}")

    def render(self) -> str:
        """Canonical filename with 4-digit zero-padded indices."""
        return (
            f"{self.id_t}_{self.id_s}_"
            f"{self.vid_idx:0{INDEX_PAD}d}_{self.frame_idx:0{INDEX_PAD}d}.png"
        )

    def target_name(self) -> str:
        """Canonical filename of the corresponding real target frame."""
        return render_real_name(self.id_t, self.vid_idx, self.frame_idx)

    def __str__(self) -> str:
        return self.render()[: -len(".png")]


def parse_name(filename: str) -> FaceSwapId:
    """Parse a fake-image basename of the form idT_idS_vidIdx_frameIdx.png."""
    if "/" in filename or "\\" in filename:
        raise NamingError(f"{filename!r} is not a basename")
    if not filename.endswith(".png"):
        raise NamingError(f"{filename!r} does not end in .png")
    stem = filename[: -len(".png")]
    tokens = stem.split("_")
    if len(tokens) != 4:
        raise NamingError(f"{filename!r} has {len(tokens)} underscore tokens, expected 4")
    id_t, id_s, vid, frame = tokens
    return FaceSwapId(
        id_t=_check_label(id_t, "target"),
        id_s=_check_label(id_s, "source"),
        vid_idx=_parse_index(vid, "video"),
        frame_idx=_parse_index(frame, "frame"),
    )


def render_real_name(person: str, vid_idx: int, frame_idx: int) -> str:
    _check_label(person, "person")
    return f"{person}_{vid_idx:0{INDEX_PAD}d}_{frame_idx:0{INDEX_PAD}d}.png"


def parse_real_name(filename: str) -> tuple[str, int, int]:
    """Parse a real-image basename of the form idT_vidIdx_frameIdx.png."""
    if not filename.endswith(".png"):
        raise NamingError(f"{filename!r} does not end in .png")
    tokens = filename[: -len(".png")].split("_")
    if len(tokens) != 3:
        raise NamingError(f"{filename!r} has {len(tokens)} underscore tokens, expected 3")
    person, vid, frame = tokens
    return (
        _check_label(person, "person"),
        _parse_index(vid, "video"),
        _parse_index(frame, "frame"),
    )


@dataclass
class SwapTaskList:
    """The face swaps to be created, plus their targets and source references."""

    entries: List[FaceSwapId]
    target_paths: Dict[FaceSwapId, Path]
    target_sizes: Dict[FaceSwapId, tuple[int, int]]  # (width, height)
    source_refs: Dict[str, IdentityReference]
    root: Optional[Path] = None

    def __post_init__(self):
        if len(set(self.entries)) != len(self.entries):
            raise ParameterError("task list entries must be unique")
        for entry in self.entries:
            if entry not in self.target_paths:
                raise ParameterError(f"task {entry} has no target image")
            if entry.id_s not in self.source_refs:
                raise ParameterError(f"task {entry} has no source reference for {entry.id_s}")

    def __len__(self) -> int:
        return len(self.entries)

    def target_image(self, entry: FaceSwapId) -> ImageBuf:
        return load_png(self.target_paths[entry])


def write_task_list(path: str | Path, entries: List[FaceSwapId]) -> None:
    """One canonical fake filename per line, UTF-8."""
    Path(path).write_text("".join(e.render() + "\n" for e in entries), encoding="utf-8")


def read_task_list(path: str | Path) -> List[FaceSwapId]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [parse_name(line.strip()) for line in lines if line.strip()]


def load_task_list(
    root: str | Path, provider: EmbeddingProvider = TOY_PROVIDER
) -> SwapTaskList:
    """Load ``tasks.txt`` from a dataset root; targets resolve into ``real/``
    and per-person references are embedded from ``refs/<person>/``.
    """
    root = Path(root)
    entries = read_task_list(root / "tasks.txt")
    target_paths: Dict[FaceSwapId, Path] = {}
    target_sizes: Dict[FaceSwapId, tuple[int, int]] = {}
    for entry in entries:
        tpath = root / "real" / entry.target_name()
        if not tpath.is_file():
            raise ValidationError(f"target image missing for task {entry}: {tpath}")
        img = load_png(tpath)
        target_paths[entry] = tpath
        target_sizes[entry] = (img.width, img.height)

    source_refs: Dict[str, IdentityReference] = {}
    for person in sorted({e.id_s for e in entries}):
        ref_dir = root / "refs" / person
        ref_paths = sorted(ref_dir.glob("*.png"))
        if not ref_paths:
            raise ValidationError(f"no reference images for source person {person} in {ref_dir}")
        source_refs[person] = id_reference(
            [load_png(p) for p in ref_paths], person, provider
        )
    return SwapTaskList(
        entries=entries,
        target_paths=target_paths,
        target_sizes=target_sizes,
        source_refs=source_refs,
        root=root,
    )


@dataclass(frozen=True)
class SubmissionManifest:
    """A validated creation submission: complete, decodable, size-matched."""

    team: str
    phase: str
    images: Dict[FaceSwapId, Path]
    checksum: str

    @property
    def n(self) -> int:
        return len(self.images)

    def to_json_dict(self) -> dict:
        return {"team": self.team, "phase": self.phase, "n": self.n, "checksum": self.checksum}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), separators=(",", ":"))


def submission_checksum(paths: List[Path]) -> str:
    """SHA-256 over the raw file bytes, concatenated in the given order."""
    digest = hashlib.sha256()
    for p in paths:
        digest.update(Path(p).read_bytes())
    return digest.hexdigest()


def validate_submission(
    directory: str | Path,
    tasks: SwapTaskList,
    team: str = "",
    phase: str = "",
) -> SubmissionManifest:
    """Check exact task coverage, decodability, and per-image dimensions.

    The checksum hashes image bytes in task-list order, so directory listing
    order can never change it.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise ValidationError(f"submission directory {directory} not readable")

    found: Dict[FaceSwapId, Path] = {}
    extras: List[str] = []
    for path in sorted(directory.iterdir()):
        if not path.is_file():
            extras.append(path.name)
            continue
        try:
            fid = parse_name(path.name)
        except NamingError:
            extras.append(path.name)
            continue
        found[fid] = path

    wanted = set(tasks.entries)
    extra_ids = [fid.render() for fid in sorted(set(found) - wanted)]
    if extras or extra_ids:
        raise ExtraneousFileError(sorted(extras + extra_ids))
    missing = [e for e in tasks.entries if e not in found]
    if missing:
        raise CoverageError(missing)

    ordered_paths: List[Path] = []
    for entry in tasks.entries:
        path = found[entry]
        img = load_png(path)
        tw, th = tasks.target_sizes[entry]
        if (img.width, img.height) != (tw, th):
            raise ShapeError(
                f"{entry.render()}: submitted {img.width}x{img.height} but target is {tw}x{th}"
            )
        ordered_paths.append(path)

    return SubmissionManifest(
        team=team,
        phase=phase,
        images={e: found[e] for e in tasks.entries},
        checksum=submission_checksum(ordered_paths),
    )
