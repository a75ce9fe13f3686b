from setuptools import setup, find_packages

setup(
    name="asymgame",
    version="0.1.0",
    packages=find_packages(exclude=["tests"]),
    install_requires=[
        "pandas",
        "numpy",
        "scipy",
    ],
    extras_require={
        "test": ["pytest", "pytest-html", "pytest-dependency"],
    },
    entry_points={
        "console_scripts": ["asymgame=src.cli:main"],
    },
    author="Price Hatfield",
    description="Value, bounds and optimal belief processes of zero-sum games with a privately observed Markov chain",
    python_requires=">=3.9",
)
