"""Multi-criteria recommendation on per-criterion bipartite graph views.

Each rating criterion becomes its own user-item graph. A shared attention
encoder embeds every view, contrastive objectives align the views, and a
margin-insensitive linear regressor maps fused user/item embeddings to
overall ratings.
"""

__version__ = "0.1.0"
