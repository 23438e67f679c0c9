from setuptools import find_packages, setup

# REQUIREMENTS
with open("requirements.txt", encoding="utf-8") as f:
    requirements = [line.strip() for line in f
                    if line.strip() and not line.startswith(("#", "pytest"))]

# SETUP
setup(
    name="gully-vqa",
    version="1.0.0",
    description="Ephemeral gully detection with vision-language models over temporal aerial imagery",
    packages=find_packages(exclude=("tests",)),
    python_requires=">=3.9",
    install_requires=requirements,
    extras_require={"test": ["pytest==8.3.5"]},
    entry_points={"console_scripts": ["gully-vqa = gully_vqa.cli:main"]},
)
